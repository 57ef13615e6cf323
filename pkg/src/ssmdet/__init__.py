"""ssmdet: one-class selective-state-space autoencoder with a residual-image
CNN classifier, evaluation metrics, and a scan-vs-attention scaling benchmark."""

__version__ = "0.1.0"
