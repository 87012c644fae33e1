"""ACP consensus simulator: committee sortition, Reduction, parallel PBFT*, analytics."""

__version__ = "0.1.0"
