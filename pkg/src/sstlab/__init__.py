"""Semi-Siamese training for shallow metric learning on synthetic identities."""

__version__ = "0.1.0"
