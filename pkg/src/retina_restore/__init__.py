"""Retina-inspired low-light image restoration."""
