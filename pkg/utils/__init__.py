# Utilities package for the misclassified-regressor pipeline
