"""Tactile-probe-guided finetuning of a small cost-volume stereo model.

Two-stage pipeline on synthetic stereo scenes with diffuse and transparent
objects: (1) pick a budget of touch points by greedily maximizing a
confidence-mask utility with entropy-based surrogate tuning, (2) finetune
the stereo model on the probed sparse disparity labels with a
confidence-anchored regularization loss.
"""

__version__ = "0.1.0"
