"""Configuration, persistence, pipeline stages and the command line."""
