"""Soft-biometric inference (gender, major, typing style, age, height) from
keystroke dynamics: ingest, features, preprocessing, classical and neural
models, evaluation protocol and a synthetic data generator."""

__version__ = "0.1.0"
