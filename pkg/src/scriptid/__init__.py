"""Line-level script identification with script-selecting OCR."""

__version__ = "0.1.0"
