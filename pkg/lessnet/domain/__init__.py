"""Registration domain: pyramid, models, warping, losses, training, evaluation."""
