"""Streaming nonverbal sound-event detection.

Pipeline: 64-bin log-mel frontend at 100 Hz -> causal temporal convolutional
network -> sparse-event post-processor, plus training, per-user head
personalization, and a synthetic benchmark corpus for desk-scale validation.
"""

__version__ = "0.1.0"
