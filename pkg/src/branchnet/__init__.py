"""Feed-forward networks with a coarse-label branch tapped off a hidden layer."""

__version__ = "0.1.0"
