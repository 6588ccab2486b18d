"""Graph-restricted transformer that summarizes MiniLang programs."""

__version__ = "0.1.0"
