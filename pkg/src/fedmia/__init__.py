"""Membership-inference attacks against centrally and federally trained
classifiers, with sample-wise and batch-wise attack-dataset generation."""

from . import attack, data, experiment, federated, nn, shadow  # noqa: F401

__version__ = "0.1.0"
