"""Dynamic-graph link prediction by language modelling over ego-node token sequences."""

__version__ = "0.1.0"
