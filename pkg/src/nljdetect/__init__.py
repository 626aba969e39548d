"""Noise-like jammer detection with sparse cyclic estimation."""
