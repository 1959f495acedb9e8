"""Statistical model checking of STL specifications with expectedly private stopping rules."""
__version__ = "0.1.0"
