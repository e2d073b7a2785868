"""Pipeline stages: fixture data, synthesis, training and experiments."""
