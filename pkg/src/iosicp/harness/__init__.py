"""Experiment harness: scene sets, end-to-end pipeline, protocols, CSV/SVG output and CLI."""
