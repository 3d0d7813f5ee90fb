"""Experiment harness: configs, runs, reports and the CLI."""
