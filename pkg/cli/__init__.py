# CLI package for the misclassified-regressor pipeline
