"""Few-task meta-learning engine: prototypical networks with learned task
interpolation, bilevel training via implicit hypergradients, and a
numerical verification suite for the accompanying theory."""

__version__ = "0.1.0"

__all__ = ["__version__"]
