"""Input validation helpers shared by the estimator API and the CLI."""

from __future__ import annotations

import numpy as np

from .adjacency import SpatialGraph
from .data import Dataset, reorder_areas
from .errors import InputError

__all__ = ["check_dataset", "check_graph_alignment", "check_expected",
           "check_seed"]


def check_dataset(d) -> Dataset:
    if not isinstance(d, Dataset):
        raise InputError(f"expected a Dataset, got {type(d).__name__}")
    return d


def check_graph_alignment(d: Dataset, graph) -> Dataset:
    """Ensure the dataset covers exactly the graph's areas, in its order."""
    if not isinstance(graph, SpatialGraph):
        raise InputError(f"expected a SpatialGraph, got {type(graph).__name__}")
    if d.area_ids == graph.area_ids:
        return d
    return reorder_areas(d, graph.area_ids)


def check_expected(expected, shape: tuple[int, int, int]) -> np.ndarray:
    expected = np.asarray(expected, dtype=float)
    if expected.shape != shape:
        raise InputError(f"expected counts must have shape {shape}, "
                         f"got {expected.shape}")
    if np.any(~np.isfinite(expected)) or np.any(expected < 0.0):
        raise InputError("expected counts must be finite and non-negative")
    return expected


def check_seed(seed) -> int:
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool):
        raise InputError(f"seed must be an integer, got {seed!r}")
    return int(seed)
