"""Tests for rm_lab."""
