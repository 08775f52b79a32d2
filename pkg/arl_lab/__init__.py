"""Maximum-likelihood and maximum-entropy adversarial representation learning lab."""

__version__ = "0.1.0"
