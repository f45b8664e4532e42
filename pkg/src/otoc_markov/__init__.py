"""Averaged OTOC dynamics in random quantum circuits."""
