"""ctcaug - self-conditioned CTC with intermediate-prediction augmentation."""
