"""Joint service placement and routing for in-flight services over a
space-air-ground integrated network (SAGIN)."""

__version__ = "0.1.0"
