"""Package version, importable without triggering package __init__ side effects."""

__version__ = "0.1.0"
