"""Analytical performance models for fine-grained mixture-of-experts inference."""

from ._moeperf import *  # noqa: F401,F403
from ._moeperf import ValidationError

__all__ = [name for name in dir() if not name.startswith("_")]
