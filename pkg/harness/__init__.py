"""Experiment configuration, runner, verification suite and CLI."""
