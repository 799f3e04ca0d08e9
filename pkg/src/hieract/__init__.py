"""Hierarchical energy-model understanding of complex actions from
body-joint sequences: descriptors, dictionaries, structured training, and
exact DP labeling at three semantic levels (poselets, atomic actions,
complex actions)."""

__version__ = "0.1.0"
