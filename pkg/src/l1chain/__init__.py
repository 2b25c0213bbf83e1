"""Level-0 to Level-1 processing chain for a frame-transfer ocean-colour camera."""

__version__ = "0.1.0"
