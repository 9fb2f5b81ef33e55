"""Brute-force reference computations used to check the analytic models."""

from __future__ import annotations

import numpy as np


def sphere_cells(radius: float, min_cells: int = 100_000) -> tuple[np.ndarray, float]:
    """Centres of cubic cells (edge returned) tiling a sphere, at least ``min_cells`` of them.

    The lattice is offset by half a cell so the cell set is mirror symmetric
    through the sphere centre in all three axes.
    """
    n = int(np.ceil((6.0 * min_cells / np.pi) ** (1.0 / 3.0)))
    while True:
        edge = 2.0 * radius / n
        ax = (np.arange(n) - (n - 1) / 2.0) * edge
        x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
        inside = x**2 + y**2 + z**2 <= radius**2
        if inside.sum() >= min_cells:
            return np.column_stack([x[inside], y[inside], z[inside]]), edge
        n += 2


def discretized_sphere_field(moment, radius: float, offset, min_cells: int = 100_000) -> np.ndarray:
    """Field at ``offset`` from the centre of a uniformly magnetized sphere of total ``moment``.

    Each cell carries an equal share of the moment; cell fields are summed with
    the component form B_i = k (3 x_i (m.x) - |x|^2 m_i) / |x|^5.
    """
    cells, _ = sphere_cells(radius, min_cells)
    m = np.asarray(moment, dtype=float) / len(cells)
    x = np.asarray(offset, dtype=float) - cells
    r2 = np.einsum("ij,ij->i", x, x)
    mdotx = x @ m
    terms = (3.0 * x * mdotx[:, None] - r2[:, None] * m) / (r2 ** 2.5)[:, None]
    return 1e-7 * terms.sum(axis=0)
