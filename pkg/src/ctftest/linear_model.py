"""Gaussian linear model, projection scores and synthetic data generation.

The observation model is ``y = a0 + sum_{v in A} a_v x_v + noise`` with
independent centered Gaussian design columns.  Scores are normalized excess
regression sums of squares: for an index set ``S`` (one variable, or one
cell of the partition), project ``y`` onto span{x_v : v in S} + constants and
measure how much of ``y``'s energy the projection captures beyond the mean.

Projections are computed through QR factorizations of centered designs,
never through normal equations.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import SingularDesignError

RANK_TOL = 1e-10


@dataclass(frozen=True)
class Partition:
    """Disjoint cover of the variable indices ``0 .. n_vars - 1`` by cells."""

    cells: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if not self.cells:
            raise ValueError("partition must contain at least one cell")
        seen: set[int] = set()
        for i, cell in enumerate(self.cells):
            if len(cell) == 0:
                raise ValueError(f"cell {i} is empty")
            if seen.intersection(cell):
                raise ValueError(f"cell {i} overlaps an earlier cell")
            seen.update(cell)
        if seen != set(range(len(seen))) or min(seen) != 0:
            raise ValueError("cells must cover 0..n_vars-1 without gaps")

    @classmethod
    def contiguous(cls, n_vars: int, cell_size: int) -> "Partition":
        """Split ``0..n_vars-1`` into consecutive cells of equal size."""
        if n_vars % cell_size != 0:
            raise ValueError(f"cell size {cell_size} does not divide {n_vars}")
        return cls(
            tuple(
                tuple(range(j * cell_size, (j + 1) * cell_size))
                for j in range(n_vars // cell_size)
            )
        )

    @property
    def n_vars(self) -> int:
        return sum(len(c) for c in self.cells)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def nu_g_max(self) -> int:
        """Size of the largest cell."""
        return max(len(c) for c in self.cells)

    @property
    def uniform_cell_size(self) -> int | None:
        """Common cell size, or None if cells vary."""
        sizes = {len(c) for c in self.cells}
        return sizes.pop() if len(sizes) == 1 else None

    @cached_property
    def _cell_arrays(self) -> tuple[np.ndarray, ...]:
        return tuple(np.asarray(c, dtype=np.intp) for c in self.cells)

    @cached_property
    def var_cell_map(self) -> np.ndarray:
        """Array mapping every variable index to its cell index."""
        out = np.empty(self.n_vars, dtype=np.intp)
        for g, cell in enumerate(self.cells):
            out[list(cell)] = g
        out.setflags(write=False)
        return out

    def cell_of(self, v: int) -> int:
        """Index of the cell containing variable ``v``."""
        return int(self.var_cell_map[v])


@dataclass(frozen=True)
class Dataset:
    """Response vector, design matrix and partition of the design columns.

    ``sigma_y_sq`` is the known response variance; when absent the empirical
    variance (divisor n-1) is used.  ``true_active`` records the planted
    active set in simulations.  Arrays are frozen after construction.
    """

    y: np.ndarray
    x: np.ndarray
    partition: Partition
    true_active: frozenset[int] | None = None
    sigma_y_sq: float | None = None

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        if y.ndim != 1 or x.ndim != 2 or x.shape[0] != y.shape[0]:
            raise ValueError(f"incompatible shapes y{y.shape}, x{x.shape}")
        if y.shape[0] < 3:
            raise ValueError("need at least 3 samples")
        if x.shape[1] != self.partition.n_vars:
            raise ValueError(
                f"design has {x.shape[1]} columns but partition covers "
                f"{self.partition.n_vars}"
            )
        if self.sigma_y_sq is not None and self.sigma_y_sq <= 0:
            raise ValueError("sigma_y_sq must be positive")
        y.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)

    @property
    def n_samples(self) -> int:
        return self.y.shape[0]

    @property
    def n_vars(self) -> int:
        return self.x.shape[1]

    def y_variance(self) -> float:
        """Known response variance if supplied, else the empirical one."""
        if self.sigma_y_sq is not None:
            return float(self.sigma_y_sq)
        return float(self.y.var(ddof=1))


@dataclass(frozen=True)
class SimConfig:
    """Synthetic data layout: planted actives cluster inside cells.

    ``n_active`` variables carry coefficient ``coef``; they occupy the first
    ``actives_per_cell`` positions of each of the first
    ``n_active / actives_per_cell`` cells.  Since design columns are i.i.d.,
    the placement is statistically immaterial but keeps runs reproducible.
    """

    n_vars: int
    cell_size: int
    n_samples: int
    n_active: int = 0
    actives_per_cell: int = 1
    coef: float = 1.0
    var_x: float = 1.0
    var_noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_vars % self.cell_size != 0:
            raise ValueError(
                f"cell size {self.cell_size} does not divide n_vars {self.n_vars}"
            )
        if not 0 <= self.n_active <= self.n_vars:
            raise ValueError("n_active must lie in [0, n_vars]")
        if self.actives_per_cell < 1 or self.actives_per_cell > self.cell_size:
            raise ValueError("actives_per_cell must lie in [1, cell_size]")
        if self.n_active % self.actives_per_cell != 0:
            raise ValueError(
                "actives_per_cell must divide n_active "
                f"({self.actives_per_cell} vs {self.n_active})"
            )
        if self.n_active_cells > self.n_vars // self.cell_size:
            raise ValueError("more active cells requested than cells available")
        if self.n_samples < 3:
            raise ValueError("need at least 3 samples")
        if self.var_x <= 0 or self.var_noise <= 0:
            raise ValueError("variances must be positive")

    @property
    def n_active_cells(self) -> int:
        return 0 if self.n_active == 0 else self.n_active // self.actives_per_cell

    @property
    def partition(self) -> Partition:
        return Partition.contiguous(self.n_vars, self.cell_size)

    @property
    def active_indices(self) -> tuple[int, ...]:
        out: list[int] = []
        for j in range(self.n_active_cells):
            start = j * self.cell_size
            out.extend(range(start, start + self.actives_per_cell))
        return tuple(out)


def generate_dataset(config: SimConfig) -> Dataset:
    """Draw one dataset from the linear model; fully determined by the seed."""
    rng = np.random.default_rng(config.seed)
    x = rng.normal(0.0, np.sqrt(config.var_x), size=(config.n_samples, config.n_vars))
    noise = rng.normal(0.0, np.sqrt(config.var_noise), size=config.n_samples)
    active = config.active_indices
    y = noise if not active else x[:, list(active)].sum(axis=1) * config.coef + noise
    return Dataset(
        y=y,
        x=x,
        partition=config.partition,
        true_active=frozenset(active),
    )


def _column_scale(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.linalg.norm(x, axis=0), 1.0)


def centered_unit_columns(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Centered design columns scaled to unit norm.

    Returns ``(units, singular_mask)`` where constant (rank-deficient)
    columns are flagged and left as zeros.
    """
    xc = x - x.mean(axis=0)
    norms = np.linalg.norm(xc, axis=0)
    singular = norms <= RANK_TOL * _column_scale(x)
    safe = np.where(singular, 1.0, norms)
    return xc / safe, singular


def cell_bases(
    x: np.ndarray, partition: Partition, rank_tol: float = RANK_TOL
) -> tuple[list[np.ndarray | None], tuple[int, ...]]:
    """Orthonormal bases of the centered per-cell designs.

    Returns one ``(n, |g|)`` basis per cell, or None for cells whose centered
    design is rank deficient (smallest singular value below ``rank_tol``
    times the largest), together with the indices of those cells.
    """
    xc = x - x.mean(axis=0)
    size = partition.uniform_cell_size
    bases: list[np.ndarray | None] = []
    singular: list[int] = []
    if size is not None:
        n = x.shape[0]
        stacked = xc.reshape(n, partition.n_cells, size).transpose(1, 0, 2) \
            if _is_contiguous(partition) else \
            np.stack([xc[:, list(c)] for c in partition.cells])
        q, r = np.linalg.qr(stacked)
        svals = np.linalg.svd(r, compute_uv=False)
        for g in range(partition.n_cells):
            if svals[g, -1] <= rank_tol * max(svals[g, 0], rank_tol):
                bases.append(None)
                singular.append(g)
            else:
                bases.append(q[g])
        return bases, tuple(singular)
    for g, cell in enumerate(partition.cells):
        q, r = np.linalg.qr(xc[:, list(cell)])
        s = np.linalg.svd(r, compute_uv=False)
        if s[-1] <= rank_tol * max(s[0], rank_tol):
            bases.append(None)
            singular.append(g)
        else:
            bases.append(q)
    return bases, tuple(singular)


def _is_contiguous(partition: Partition) -> bool:
    start = 0
    for cell in partition.cells:
        if tuple(cell) != tuple(range(start, start + len(cell))):
            return False
        start += len(cell)
    return True


def _single_cell_basis(x: np.ndarray, cell: tuple[int, ...]) -> np.ndarray:
    xc_cell = x[:, list(cell)]
    xc_cell = xc_cell - xc_cell.mean(axis=0)
    q, r = np.linalg.qr(xc_cell)
    s = np.linalg.svd(r, compute_uv=False)
    if s[-1] <= RANK_TOL * max(s[0], RANK_TOL):
        raise SingularDesignError(
            f"centered design of cell {cell} is rank deficient"
        )
    return q

def cell_score(data: Dataset, g: int) -> float:
    """Normalized excess regression sum of squares of cell ``g``.

    ``(|P_g y|^2 - |ybar|^2) / sigma_y^2`` where P_g projects onto the span
    of the cell's design columns plus the constant vector and ybar is the
    constant mean vector.  Always nonnegative; raises on a rank-deficient
    cell design.
    """
    cell = data.partition.cells[g]
    if len(cell) + 1 >= data.n_samples:
        raise ValueError(
            f"cell of size {len(cell)} needs more than {len(cell) + 1} samples"
        )
    q = _single_cell_basis(data.x, cell)
    yc = data.y - data.y.mean()
    proj = q.T @ yc
    return float(proj @ proj / data.y_variance())


def variable_score(data: Dataset, v: int) -> float:
    """Single-variable analogue of :func:`cell_score`."""
    if data.n_samples <= 2:
        raise ValueError("need more than 2 samples")
    col = data.x[:, v]
    xc = col - col.mean()
    norm = np.linalg.norm(xc)
    if norm <= RANK_TOL * max(np.linalg.norm(col), 1.0):
        raise SingularDesignError(f"variable {v} is constant")
    yc = data.y - data.y.mean()
    proj = float(xc @ yc) / norm
    return proj * proj / data.y_variance()
