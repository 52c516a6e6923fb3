"""Experiment handlers behind the CLI subcommands."""
