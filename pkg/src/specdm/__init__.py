"""Two-stream latent diffusion for paired hyperspectral image/mask synthesis."""
__version__ = "0.1.0"
