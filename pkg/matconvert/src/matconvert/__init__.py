"""MAT-container to HSIC1/HSIL1 converter."""

from .convert import AmbiguityError, MatFormatError, convert, load_arrays

__version__ = "0.1.0"
__all__ = ["convert", "load_arrays", "AmbiguityError", "MatFormatError"]
