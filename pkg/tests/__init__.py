"""Test package for the misclassified-regressor pipeline."""
