"""Core-set selection for cheaper differentiable architecture search."""
__version__ = "0.1.0"
