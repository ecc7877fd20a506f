"""Image-to-query suggestion pipeline at desk scale.

Synthetic intent worlds, threshold-routed annotation, a multi-task reward
model, an RL-tuned suggestion policy, a sliding-window diversity selector,
ranking metrics, and an exact-kNN serving layer with click feedback.
"""

__version__ = "0.1.0"
