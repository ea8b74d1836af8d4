"""LessNet - decoder-only deformable image registration with handcrafted pooling features."""

__version__ = "0.1.0"
