"""GRU autoencoder with temporal attention, outcome-guided training, and
GMM subtype clustering for daily wearable time series."""

__version__ = "0.1.0"
