"""Flow-based intrusion detection with a sparse autoencoder, plus alert-graph
analysis that reconstructs multi-stage attack evidence chains."""

__version__ = "0.1.0"
