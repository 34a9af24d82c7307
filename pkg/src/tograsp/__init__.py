"""Task-oriented grasp prediction from an image and a language instruction."""

__version__ = "0.1.0"
