"""Plotting CLI for the ctsgd CSV dialect."""
