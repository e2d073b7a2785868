"""Training, evaluation and artifact plumbing around synthesis."""
