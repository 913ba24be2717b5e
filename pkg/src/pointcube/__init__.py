"""
pointcube: global/local contrastive learning over 3 x 3 x 3 point cloud blocks,
with zero-shot classification, reasoning and part-level reasoning.
"""

__version__ = "0.1.0"
