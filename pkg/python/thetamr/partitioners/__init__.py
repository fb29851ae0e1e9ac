"""Cube partitioners for thetamr."""

import logging
from functools import lru_cache
from typing import Any, Dict, List, Tuple, Type

from thetamr.exceptions import ConfigurationError, PartitionError
from thetamr.partitioners.base import (
    BasePartitioner,
    PartitionAssignment,
    aligned_level,
    cell_of_tuple,
    choose_eta,
    components_for_tuple,
    partition_score,
    score_value,
    tuple_counts,
)
from thetamr.partitioners.hilbert import (
    HilbertPartitioner,
    hilbert_index,
    hilbert_indices,
    hilbert_inverse,
    hilbert_order,
)
from thetamr.partitioners.slab import SlabPartitioner
from thetamr.types import CubeConfig, DuplicationEstimate

logger = logging.getLogger(__name__)

_PARTITIONERS: Dict[str, Type[BasePartitioner]] = {
    "hilbert": HilbertPartitioner,
    "slab": SlabPartitioner,
}


def get_partitioner(name: str, **options: Any) -> BasePartitioner:
    """
    Get a partitioner instance by name.

    Args:
        name: Name of the partitioner
        **options: Partitioner-specific options (e.g. outer_axis for slab)

    Returns:
        Partitioner instance

    Raises:
        ConfigurationError: If the partitioner is not supported
    """
    name = name.lower()

    if name not in _PARTITIONERS:
        available = ", ".join(_PARTITIONERS.keys())
        raise ConfigurationError(
            f"Partitioner '{name}' not supported. Available partitioners: {available}"
        )

    return _PARTITIONERS[name](**options)


def list_partitioners() -> List[str]:
    """List all available partitioners."""
    return list(_PARTITIONERS.keys())


@lru_cache(maxsize=256)
def _cached_build(
    name: str,
    options: Tuple[Tuple[str, Any], ...],
    cardinalities: Tuple[int, ...],
    eta: int,
    k_r: int,
) -> PartitionAssignment:
    config = CubeConfig(cardinalities=list(cardinalities), eta=eta)
    return get_partitioner(name, **dict(options)).build(config, k_r)


def build_partition(
    config: CubeConfig, k_r: int, partitioner: str = "hilbert", **options: Any
) -> PartitionAssignment:
    """Build (or reuse) the partition of a cube into k_r components."""
    if not 1 <= k_r <= config.total_cells:
        raise PartitionError(
            f"k_r={k_r} outside [1, {config.total_cells}] for this cube"
        )
    return _cached_build(
        partitioner,
        tuple(sorted(options.items())),
        tuple(config.cardinalities),
        config.eta,
        k_r,
    )


def duplication_factor(
    config: CubeConfig,
    k_r: int,
    dim: int,
    partitioner: str = "hilbert",
    warn: bool = True,
) -> DuplicationEstimate:
    """
    Expected copies of each tuple of one dimension.

    Recursion-aligned component counts k_r = 2**(j*m) split the cube into
    sub-cubes of side 2**(eta-j), so every tuple reaches 2**(j*(m-1))
    components. Other counts fall back to the measured mean Cnt.
    """
    level = aligned_level(config, k_r)
    if level >= 0 and partitioner == "hilbert":
        value = float(1 << (level * (config.dims - 1)))
        return DuplicationEstimate(value=value, exact=True)
    pa = build_partition(config, k_r, partitioner)
    counts = tuple_counts(pa, config, dim)
    log = logger.warning if warn else logger.debug
    log(
        "k_r=%d is not recursion-aligned for a %d-d cube; using measured duplication",
        k_r,
        config.dims,
    )
    return DuplicationEstimate(value=float(counts.mean()), exact=False)


def workload(config: CubeConfig) -> float:
    product = 1.0
    for cardinality in config.cardinalities:
        product *= cardinality
    return product


def delta_sweep(
    config: CubeConfig, lambda_: float, k_max: int, partitioner: str = "hilbert"
) -> List[Tuple[int, float, int]]:
    """(k_r, delta, score) for every k_r in [1, min(k_max, cells)]."""
    product = workload(config)
    rows = []
    for k_r in range(1, min(k_max, config.total_cells) + 1):
        score = score_value(build_partition(config, k_r, partitioner), config)
        delta = lambda_ * score + (1 - lambda_) * product / k_r
        rows.append((k_r, delta, score))
    return rows


def choose_k_r(
    config: CubeConfig,
    lambda_: float = 0.4,
    k_max: int = 64,
    partitioner: str = "hilbert",
) -> int:
    """Component count minimising the duplication/workload trade-off; ties go low."""
    if not 0 <= lambda_ <= 1:
        raise PartitionError(f"lambda={lambda_} outside [0, 1]")
    if k_max < 1:
        raise PartitionError(f"k_max={k_max} must be at least 1")
    best_k, best_delta = 1, float("inf")
    for k_r, delta, _ in delta_sweep(config, lambda_, k_max, partitioner):
        if delta < best_delta:
            best_k, best_delta = k_r, delta
    return best_k


__all__ = [
    "BasePartitioner",
    "HilbertPartitioner",
    "PartitionAssignment",
    "SlabPartitioner",
    "build_partition",
    "cell_of_tuple",
    "choose_eta",
    "choose_k_r",
    "components_for_tuple",
    "delta_sweep",
    "duplication_factor",
    "get_partitioner",
    "hilbert_index",
    "hilbert_indices",
    "hilbert_inverse",
    "hilbert_order",
    "list_partitioners",
    "partition_score",
    "score_value",
    "tuple_counts",
    "workload",
]
