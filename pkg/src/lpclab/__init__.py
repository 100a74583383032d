"""Latent point collapse lab: small dense classifiers trained with a strong L2 penalty on
penultimate latents, and the metrics that measure the resulting collapse."""

__version__ = "0.1.0"
