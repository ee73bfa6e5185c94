"""Heat content of metric graphs with a Dirichlet vertex."""

__version__ = "0.1.0"
