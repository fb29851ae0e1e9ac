"""Tests for thetamr."""
