"""Controlled forgetting of classes in conditional variational generative
models: a desk-scale VAE/DDPM stack with EWC anchoring, generative replay,
surrogate forgetting objectives and classifier-based evaluation."""

__version__ = "0.1.0"
