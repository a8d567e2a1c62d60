"""Per-slot graph structures: one-hot local adjacency and feature selection.

Graph nodes are the vehicles only. Each node's local region is itself plus
its in-range neighbors, laid out in fixed-size padded rows so batches keep
a constant shape; a boolean mask marks the live slots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AdjacencyOneHot:
    """Local region of one node as one-hot rows over the M nodes.

    Row 0 selects the node itself, the following rows its neighbors in
    ascending distance order (ties by index). Padding rows are all-zero
    and masked out.
    """

    onehot: np.ndarray   # (b_max + 1, M) float64
    mask: np.ndarray     # (b_max + 1,) bool
    indices: np.ndarray  # (b_max + 1,) int; padded slots repeat the node itself


def order_neighbors(i: int, neighbor_ids: np.ndarray, positions: np.ndarray,
                    b_max: int) -> np.ndarray:
    """Neighbors of node i sorted by (distance, index), truncated to b_max."""
    neighbor_ids = np.asarray(neighbor_ids, dtype=int)
    if neighbor_ids.size == 0:
        return neighbor_ids
    d = np.hypot(positions[neighbor_ids, 0] - positions[i, 0],
                 positions[neighbor_ids, 1] - positions[i, 1])
    order = np.lexsort((neighbor_ids, d))
    return neighbor_ids[order][:b_max]


def build_adjacency(i: int, neighbor_sets: list[np.ndarray], positions: np.ndarray,
                    n_nodes: int, b_max: int) -> AdjacencyOneHot:
    if i >= n_nodes:
        raise IndexError(f"node {i} out of range for {n_nodes} nodes")
    kept = order_neighbors(i, neighbor_sets[i], positions, b_max)
    slots = b_max + 1
    onehot = np.zeros((slots, n_nodes))
    mask = np.zeros(slots, dtype=bool)
    indices = np.full(slots, i, dtype=int)
    onehot[0, i] = 1.0
    mask[0] = True
    for row, j in enumerate(kept, start=1):
        onehot[row, j] = 1.0
        mask[row] = True
        indices[row] = j
    return AdjacencyOneHot(onehot=onehot, mask=mask, indices=indices)


def build_local_index(neighbor_sets: list[np.ndarray], positions: np.ndarray,
                      b_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Padded local-region node indices and mask for every node at once.

    Returns ``idx`` (M, b_max+1) and ``mask`` (M, b_max+1); padded entries of
    ``idx`` point back at the node itself so gathers stay in bounds.
    """
    n = len(neighbor_sets)
    idx = np.repeat(np.arange(n)[:, None], b_max + 1, axis=1)
    mask = np.zeros((n, b_max + 1), dtype=bool)
    mask[:, 0] = True
    for i in range(n):
        kept = order_neighbors(i, neighbor_sets[i], positions, b_max)
        idx[i, 1:1 + len(kept)] = kept
        mask[i, 1:1 + len(kept)] = True
    return idx, mask


def local_features(adjacency: AdjacencyOneHot | np.ndarray, features: np.ndarray) -> np.ndarray:
    """Features of a node's local region, selected by the one-hot rows."""
    onehot = adjacency.onehot if isinstance(adjacency, AdjacencyOneHot) else adjacency
    if onehot.shape[1] != features.shape[0]:
        raise ValueError(
            f"adjacency selects over {onehot.shape[1]} nodes but features has "
            f"{features.shape[0]} rows")
    return onehot @ features
