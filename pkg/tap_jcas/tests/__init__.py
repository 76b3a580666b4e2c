"""Test suite for tap-jcas."""
