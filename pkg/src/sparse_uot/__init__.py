"""Structured-sparse unbalanced optimal transport via greedy weakly-submodular maximization."""
