"""Per-application network behavior models with cross-feature deviation detection."""

__version__ = "0.1.0"
