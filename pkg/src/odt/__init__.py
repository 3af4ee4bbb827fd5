"""Oblivious digital tokens: prove a device is protected without revealing
that anyone checked."""

from .endpoints import Verdict
from .group import CURVE, TOY

__all__ = ["CURVE", "TOY", "Verdict"]
__version__ = "0.1.0"
