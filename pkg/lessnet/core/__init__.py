"""Cross-cutting infrastructure: errors, logging, metrics, retry."""
