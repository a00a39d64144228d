"""HyperScore: condition-driven multi-dimensional quality scores for text-to-3D samples."""

from __future__ import annotations

__version__ = "0.1.0"
