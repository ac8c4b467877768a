"""Uniform hash grid for point neighborhood queries.

Cell size is fixed at construction; queries are exact (candidates from the
covering cells are distance-filtered).
"""

from __future__ import annotations

import numpy as np


class HashGrid:
    def __init__(self, cell_size: float):
        if cell_size <= 0:
            raise ValueError("cell_size must be positive")
        self.cell = float(cell_size)
        self._points = np.zeros((0, 3))
        self._buckets: dict[tuple[int, int, int], list[int]] = {}

    def __len__(self) -> int:
        return len(self._points)

    @property
    def points(self) -> np.ndarray:
        return self._points

    def rebuild(self, points: np.ndarray):
        self._points = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, 3)
        self._buckets = {}
        if len(self._points) == 0:
            return
        keys = np.floor(self._points / self.cell).astype(np.int64)
        for idx, k in enumerate(map(tuple, keys)):
            self._buckets.setdefault(k, []).append(idx)

    def query_radius(self, center, radius: float) -> np.ndarray:
        """Indices of stored points within `radius` (inclusive) of center."""
        if len(self._points) == 0:
            return np.zeros(0, dtype=np.int64)
        c = np.asarray(center, dtype=float).reshape(3)
        lo = np.floor((c - radius) / self.cell).astype(np.int64)
        hi = np.floor((c + radius) / self.cell).astype(np.int64)
        cand: list[int] = []
        for ix in range(lo[0], hi[0] + 1):
            for iy in range(lo[1], hi[1] + 1):
                for iz in range(lo[2], hi[2] + 1):
                    cand.extend(self._buckets.get((ix, iy, iz), ()))
        if not cand:
            return np.zeros(0, dtype=np.int64)
        cand_arr = np.asarray(sorted(cand), dtype=np.int64)
        d = np.linalg.norm(self._points[cand_arr] - c, axis=1)
        return cand_arr[d <= radius]

    def min_distance(self, center, cap: float) -> float:
        """Distance to the nearest stored point, or inf if none within cap."""
        idx = self.query_radius(center, cap)
        if len(idx) == 0:
            return float("inf")
        c = np.asarray(center, dtype=float).reshape(3)
        return float(np.linalg.norm(self._points[idx] - c, axis=1).min())
