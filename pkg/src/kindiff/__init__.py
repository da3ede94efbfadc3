"""kindiff: diffusion-limit laboratory for a randomly forced kinetic equation."""

__version__ = "0.1.0"
