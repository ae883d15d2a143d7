"""Unit test package for crossoffense."""
