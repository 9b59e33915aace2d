"""Clustering of regression data with penalized Gaussian mixture regression."""
