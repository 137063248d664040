"""Post-processing and evaluation pipeline for crop-photo classifiers."""

from cropsight.classes import CLASS_CODES, CLASS_LABELS, COUNTRIES

__version__ = "0.1.0"

__all__ = ["CLASS_CODES", "CLASS_LABELS", "COUNTRIES", "__version__"]
