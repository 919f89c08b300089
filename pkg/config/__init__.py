# Configuration package for the misclassified-regressor pipeline
