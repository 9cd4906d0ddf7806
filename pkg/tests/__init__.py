# File: tests/__init__.py
"""Test package for sorl-desk."""
