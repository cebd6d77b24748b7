"""Decentralized optimal frequency control under per-node power balance."""
