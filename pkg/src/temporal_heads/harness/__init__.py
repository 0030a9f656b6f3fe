"""Command-line harness: dataset generation, training, gradient checks and ablations."""
