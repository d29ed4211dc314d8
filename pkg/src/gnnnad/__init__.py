"""Network anomaly detection by fusing a static attack graph with per-flow
traffic features, embedding the fused graphs with GSAGE and classifying the
embeddings with a random forest."""

__version__ = "0.1.0"
