"""Radio-map reconstruction with a flow-matching prior and uncertainty-aware UAV sampling."""

__version__ = "0.1.0"
