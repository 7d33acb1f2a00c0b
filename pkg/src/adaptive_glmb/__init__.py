"""GLMB multi-object tracking with adaptive clutter-rate and detection-probability estimation."""
__version__ = "0.1.0"
