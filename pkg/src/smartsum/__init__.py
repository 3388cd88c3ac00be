"""Compositional symbolic execution with function summaries for a small register IR."""
