"""Human motion prediction with temporal attention and a modified highway unit."""

__version__ = "0.1.0"
