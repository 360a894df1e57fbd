"""Gaze-assisted object referring in videos.

Score and rank candidate bounding boxes by the generative probability of a
referring expression, conditioned on appearance, depth, motion, spatial,
and gaze features, with from-scratch trainable recurrent components.
"""

__version__ = "0.1.0"
