"""Quantization and local dimensions of measures generated by recurrent IFS."""

from .errors import FraqdimError
from .ifs import Affine, RecurrentIFS, Similarity, UserBounded
from .markov import stationary, validate

__all__ = ["Affine", "FraqdimError", "RecurrentIFS", "Similarity", "UserBounded", "stationary", "validate"]
__version__ = "0.1.0"
