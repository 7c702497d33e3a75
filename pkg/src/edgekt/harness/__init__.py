"""Command-line harness, configuration and desk-scale experiment plumbing."""
