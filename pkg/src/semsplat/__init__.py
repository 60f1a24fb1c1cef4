"""3D Gaussian semantic fields with contrastive codebook learning."""

__version__ = "0.1.0"
