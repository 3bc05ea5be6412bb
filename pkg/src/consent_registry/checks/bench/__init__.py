"""Invariant checks over benchmark rows."""
