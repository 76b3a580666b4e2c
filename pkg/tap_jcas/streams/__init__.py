"""Stream classes for tap-jcas."""
