"""Command line entry and run configuration."""
