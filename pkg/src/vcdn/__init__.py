"""vcdn: causal graph discovery and counterfactual prediction for multi-body systems."""

__version__ = "0.1.0"
