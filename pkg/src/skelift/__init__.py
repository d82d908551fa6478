"""Camera-centric multi-person 3D pose lifting with confidence-weighted GCNs and TCNs."""

__version__ = "0.1.0"
