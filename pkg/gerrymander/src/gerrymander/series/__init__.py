"""Ratio analysis and differential approximants."""
