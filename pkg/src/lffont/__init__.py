"""Few-shot glyph generation from localized, component-wise style features."""

__version__ = "0.1.0"
