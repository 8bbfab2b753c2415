"""Personal sound zones with binaural rendering: physically informed transfer
functions, pose-conditioned neural filter design, and objective evaluation."""

__version__ = "0.1.0"
