"""Builtin scenario files."""
