"""Base partitioner class and partition measures."""

import math
from abc import ABC, abstractmethod
from functools import lru_cache
from typing import Any, Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np

from thetamr.exceptions import PartitionError
from thetamr.types import CubeConfig, ScoreReport

IntOrArray = Union[int, np.ndarray]


@lru_cache(maxsize=64)
def cell_coordinates(dims: int, eta: int) -> np.ndarray:
    """Coordinates of every cell, shape (dims, 2**(eta*dims)), row-major ids."""
    side = 1 << eta
    grids = np.unravel_index(np.arange(side**dims, dtype=np.int64), (side,) * dims)
    coords = np.stack([g.astype(np.int64) for g in grids])
    coords.setflags(write=False)
    return coords


class PartitionAssignment:
    """
    Split of a cube's cell traversal into k_r contiguous, near-equal segments.

    Component ids run 1..k_r. `dim_lookup[i][c]` holds the sorted ids of the
    components owning at least one cell whose i-th coordinate is c.
    """

    def __init__(
        self, config: CubeConfig, k_r: int, order: np.ndarray, partitioner: str
    ):
        total = config.total_cells
        if not 1 <= k_r <= total:
            raise PartitionError(f"k_r={k_r} outside [1, {total}] for this cube")
        if len(order) != total:
            raise PartitionError("cell order does not visit every cell")
        self.config = config
        self.k_r = k_r
        self.partitioner = partitioner
        self.boundaries: List[int] = [(j * total) // k_r for j in range(k_r + 1)]

        position_component = (
            np.searchsorted(
                np.asarray(self.boundaries[1:-1], dtype=np.int64),
                np.arange(total, dtype=np.int64),
                side="right",
            )
            + 1
        )
        self.cell_component = np.empty(total, dtype=np.int64)
        self.cell_component[order] = position_component
        self.cell_component.setflags(write=False)

        coords = cell_coordinates(config.dims, config.eta)
        side = config.side
        self._present: List[np.ndarray] = []
        for dim in range(config.dims):
            keys = coords[dim] * (k_r + 1) + self.cell_component
            hits = np.bincount(keys, minlength=side * (k_r + 1))
            self._present.append(hits.reshape(side, k_r + 1) > 0)
        self._sizes = [present.sum(axis=1) for present in self._present]
        self._dim_lookup: Optional[List[List[np.ndarray]]] = None

    @property
    def dim_lookup(self) -> List[List[np.ndarray]]:
        if self._dim_lookup is None:
            self._dim_lookup = [
                [np.flatnonzero(row) for row in present] for present in self._present
            ]
        return self._dim_lookup

    def lookup_sizes(self, dim: int) -> np.ndarray:
        """Number of components per cell coordinate of one dimension."""
        return self._sizes[dim]

    def membership(self, dim: int) -> np.ndarray:
        """Boolean matrix [cell coordinate, component id] of one dimension."""
        return self._present[dim]

    def segment(self, component: int) -> Tuple[int, int]:
        return self.boundaries[component - 1], self.boundaries[component]

    def owner(self, cells: np.ndarray) -> np.ndarray:
        """Component owning each joint cell; `cells` has shape (k, dims)."""
        linear = np.ravel_multi_index(
            tuple(cells.T), (self.config.side,) * self.config.dims
        )
        return self.cell_component[linear]

    def to_dump(self) -> Dict[str, Any]:
        return {
            "partitioner": self.partitioner,
            "cardinalities": self.config.cardinalities,
            "eta": self.config.eta,
            "k_r": self.k_r,
            "boundaries": self.boundaries,
            "dim_lookup_sizes": [sizes.tolist() for sizes in self._sizes],
        }


class BasePartitioner(ABC):
    """Base class for cube partitioners."""

    name = "base"

    @abstractmethod
    def cell_order(self, config: CubeConfig) -> np.ndarray:
        """Row-major cell ids in traversal order."""
        pass

    def options(self) -> Tuple[Tuple[str, Any], ...]:
        return ()

    def build(self, config: CubeConfig, k_r: int) -> PartitionAssignment:
        return PartitionAssignment(config, k_r, self.cell_order(config), self.name)


def cell_of_tuple(global_id: IntOrArray, cardinality: int, eta: int) -> IntOrArray:
    """Cell coordinate floor((g - 1) * 2**eta / |R|); accepts arrays."""
    ids = np.asarray(global_id, dtype=np.int64)
    if ids.size and (ids.min() < 1 or ids.max() > cardinality):
        raise PartitionError(f"global id outside [1, {cardinality}]")
    cells = ((ids - 1) << eta) // cardinality
    if np.ndim(global_id) == 0:
        return int(cells)
    return cells


def components_for_tuple(
    pa: PartitionAssignment, dim: int, global_id: int, cardinality: int
) -> FrozenSet[int]:
    cell = cell_of_tuple(global_id, cardinality, pa.config.eta)
    return frozenset(int(c) for c in pa.dim_lookup[dim][cell])


def _check_shape(pa: PartitionAssignment, config: CubeConfig) -> None:
    if (pa.config.dims, pa.config.eta) != (config.dims, config.eta):
        raise PartitionError("partition was built for a different cube shape")


def tuple_counts(pa: PartitionAssignment, config: CubeConfig, dim: int) -> np.ndarray:
    """Cnt(t) for global ids 1..|R_dim|."""
    cardinality = config.cardinalities[dim]
    cells = cell_of_tuple(np.arange(1, cardinality + 1), cardinality, config.eta)
    return pa.lookup_sizes(dim)[cells]


def partition_score(pa: PartitionAssignment, config: CubeConfig) -> ScoreReport:
    """Total number of tuple copies shipped to components."""
    _check_shape(pa, config)
    cnt = [tuple_counts(pa, config, dim) for dim in range(config.dims)]
    per_dim = [int(c.sum()) for c in cnt]
    return ScoreReport(
        cnt=[c.tolist() for c in cnt], score=sum(per_dim), per_dim_sums=per_dim
    )


def score_value(pa: PartitionAssignment, config: CubeConfig) -> int:
    """Score only, without materialising the per-tuple counts."""
    _check_shape(pa, config)
    total = 0
    for dim in range(config.dims):
        cardinality = config.cardinalities[dim]
        cells = cell_of_tuple(np.arange(1, cardinality + 1), cardinality, config.eta)
        per_cell = np.bincount(cells, minlength=config.side)
        total += int(per_cell @ pa.lookup_sizes(dim))
    return total


def aligned_level(config: CubeConfig, k_r: int) -> int:
    """j with k_r == 2**(j*m), or -1 when k_r is not recursion-aligned."""
    level = math.log2(k_r) / config.dims
    if level == int(level) and (1 << (int(level) * config.dims)) == k_r:
        if int(level) <= config.eta:
            return int(level)
    return -1


def choose_eta(
    cardinalities: Sequence[int], max_cells: int = 1 << 16, eta_max: int = 10
) -> int:
    """Recursion depth: no finer than the largest relation, within the cell budget."""
    dims = len(cardinalities)
    largest = max(cardinalities)
    eta = max(1, min(eta_max, math.ceil(math.log2(largest)) if largest > 1 else 1))
    while eta > 1 and (eta * dims > 62 or (1 << (eta * dims)) > max_cells):
        eta -= 1
    if eta * dims > 62 or (1 << (eta * dims)) > max_cells:
        raise PartitionError(
            f"A {dims}-dimensional cube exceeds the budget of {max_cells} cells"
        )
    return eta
