"""Tests for the consent registry."""
