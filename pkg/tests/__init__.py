"""
Tests for the beta_c toolkit.
"""
