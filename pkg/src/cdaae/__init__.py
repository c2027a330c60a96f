"""Cross-Domain Adversarial Auto-Encoder on a self-contained numpy autodiff core."""

__version__ = "0.1.0"
