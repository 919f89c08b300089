# Services package for the misclassified-regressor pipeline
