"""Init file for utils module."""
