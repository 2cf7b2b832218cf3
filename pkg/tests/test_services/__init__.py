"""Tests for service modules."""
