"""Top-level package for CrossOffense."""

__author__ = """Qiusheng Wu"""
__email__ = "giswqs@gmail.com"
__version__ = "0.1.0"


from .crossoffense import *
