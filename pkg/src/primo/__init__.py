"""Pre-trained-model-assisted contextual bandits with missing covariates."""
