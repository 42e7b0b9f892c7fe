"""mascara: natural-makeup dodging attacks against a simulated FR surveillance pipeline."""

__version__ = "0.1.0"
