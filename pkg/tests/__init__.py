"""Test suite for Geolab."""

