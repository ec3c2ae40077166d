"""Backdoor-conditioned deterministic diffusion models over causal graphs."""

__version__ = "0.1.0"
