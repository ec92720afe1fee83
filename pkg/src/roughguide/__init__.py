"""Classical dynamics of cold atoms in rough, current-modulated wire guides."""

__version__ = "0.1.0"
