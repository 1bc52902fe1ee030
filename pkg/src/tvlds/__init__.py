"""Identify latent linear dynamics driving time-varying regression coefficients."""
