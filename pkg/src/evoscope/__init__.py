"""Evolutionary search workbench.

Seeded evolutionary runs over tour, equation-discovery, and bin-packing
search spaces, trajectory recording, novelty / breakthrough / entropy
analytics, landscape embedding, and regression tooling, exposed through a
FastAPI service with a thin CLI client.
"""

__version__ = "0.1.0"
