"""
cclab - exact simulator and verifier for approximate convex consensus.
"""

__version__ = "0.1.0"
