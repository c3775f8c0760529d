"""Class-wise coreset selection for echocardiogram feature collections."""

__version__ = "0.1.0"
