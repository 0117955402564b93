"""Street-scale radiance fields from fleet imagery.

Subsystems: data selection over crowd captures, ground-plane depth
generation, grid-based radiance field training with depth supervision and
per-sequence appearance embeddings, and guided navigation rendering.
"""

__version__ = "0.1.0"
