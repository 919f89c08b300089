# Models package for the misclassified-regressor pipeline
