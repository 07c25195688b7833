"""Multi-view image fusion with a 3D-aware Q-Former, on a synthetic scene QA testbed."""

__version__ = "0.1.0"
