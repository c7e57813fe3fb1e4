"""Relightable mesh avatars: deformable geometry, split-sum shading with a
neural pre-filtered light, and a Monte-Carlo rendering oracle."""

__version__ = "0.1.0"
