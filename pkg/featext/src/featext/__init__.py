"""Image feature extraction companion for the captioning pipeline."""

__version__ = "0.1.0"
