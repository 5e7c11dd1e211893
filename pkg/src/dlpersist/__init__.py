"""Datalog deductive database with predicate persistence on SQL backends."""

from .database import Database, FactStore
from .engine import Goal
from .errors import DESError

__all__ = ["Database", "DESError", "FactStore", "Goal"]
