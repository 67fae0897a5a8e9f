"""Few-shot segmentation with ridge-regression prototypes built from class attributes."""

__version__ = "0.1.0"
