"""Invariant checks over benchmark and demo runs."""
