"""Through-plane MRI slice interpolation: models, baselines, metrics and experiment harness."""

__version__ = "0.1.0"
