"""Sampling-based statistics and job selectivity estimation."""

import logging
import math
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set

import numpy as np

from thetamr.exceptions import EstimationError
from thetamr.partitioners import build_partition, cell_of_tuple, choose_eta
from thetamr.relational import Relation, join_combinations
from thetamr.seeding import global_ids, rng_for
from thetamr.types import (
    ID_BYTES,
    AttributeStats,
    CubeConfig,
    JobSelectivity,
    RelationStats,
    ThetaCondition,
)

logger = logging.getLogger(__name__)

CROSS_PRODUCT_CAP = 1_000_000

Columns = Dict[str, np.ndarray]


def estimate_distinct(
    values: np.ndarray, sample_fraction: float, cardinality: int
) -> int:
    """First-order jackknife distinct count, clamped to [seen, cardinality]."""
    if len(values) == 0:
        return 0
    _, counts = np.unique(values, return_counts=True)
    seen = len(counts)
    singletons = int((counts == 1).sum())
    denominator = 1.0 - (1.0 - sample_fraction) * singletons / len(values)
    estimate = seen / denominator if denominator > 0 else cardinality
    return int(min(max(round(estimate), seen), cardinality))


def sample_relation(relation: Relation, rate: float, seed: int) -> RelationStats:
    """
    Collect statistics from a seeded uniform sample without replacement.

    Cardinality and byte size are exact; min/max/distinct come from the sample.

    Raises:
        EstimationError: If rate is outside (0, 1]
    """
    if not 0 < rate <= 1:
        raise EstimationError(f"sample rate {rate} outside (0, 1]")
    n = relation.cardinality
    if n == 0:
        return RelationStats(
            relation=relation.name,
            cardinality=0,
            bytes_total=relation.bytes_total,
            attributes=[],
            sample_rate=rate,
            seed=seed,
        )

    size = min(n, max(1, int(round(rate * n))))
    rng = rng_for(seed, "sample", relation.name)
    positions = np.sort(rng.choice(n, size=size, replace=False))
    fraction = size / n
    widths = relation.field_widths(positions)

    attributes = []
    for attribute in relation.schema.attributes:
        values = relation.column(attribute.name)[positions]
        attributes.append(
            AttributeStats(
                name=attribute.name,
                min=values.min().item(),
                max=values.max().item(),
                distinct=estimate_distinct(values, fraction, n),
                avg_width=float(widths[attribute.name].mean()),
            )
        )
    return RelationStats(
        relation=relation.name,
        cardinality=n,
        bytes_total=relation.bytes_total,
        attributes=attributes,
        sample_rate=rate,
        seed=seed,
        sample_positions=positions.tolist(),
    )


def draw_sample(relation: Relation, stats: RelationStats) -> Columns:
    """Columns of the tuples a RelationStats was computed from."""
    return relation.take(np.asarray(stats.sample_positions, dtype=np.int64))


def needed_fraction(stats: RelationStats, attributes: Optional[Iterable[str]]) -> float:
    """Share of a tuple's bytes a map task has to ship."""
    if attributes is None or stats.row_width == 0:
        return 1.0
    wanted = set(attributes)
    width = sum(a.avg_width for a in stats.attributes if a.name in wanted)
    return max(width + ID_BYTES, 1.0) / max(stats.row_width + ID_BYTES, 1.0)


def _cap_samples(
    order: Sequence[str], samples: Mapping[str, Columns], seed: int
) -> Dict[str, Columns]:
    sizes = {name: len(next(iter(samples[name].values()))) for name in order}
    if math.prod(sizes.values()) <= CROSS_PRODUCT_CAP:
        return {name: dict(samples[name]) for name in order}
    target = max(1, int(CROSS_PRODUCT_CAP ** (1.0 / len(order))))
    capped = {}
    for name in order:
        if sizes[name] <= target:
            capped[name] = dict(samples[name])
            continue
        keep = np.sort(
            rng_for(seed, "subsample", name).choice(sizes[name], target, replace=False)
        )
        capped[name] = {col: values[keep] for col, values in samples[name].items()}
    logger.debug(
        "Sample cross product of %d pairs sub-sampled to at most %d",
        math.prod(sizes.values()),
        target ** len(order),
    )
    return capped


def _component_bytes(
    stats: Sequence[RelationStats],
    config: CubeConfig,
    k_r: int,
    fractions: Sequence[float],
    partitioner: str,
    seed: int,
) -> np.ndarray:
    pa = build_partition(config, k_r, partitioner)
    loads = np.zeros(k_r + 1, dtype=np.float64)
    for dim, (rel, fraction) in enumerate(zip(stats, fractions)):
        if not rel.sample_positions:
            continue
        positions = np.asarray(rel.sample_positions, dtype=np.int64)
        ids = global_ids(seed, rel.relation, rel.cardinality)[positions]
        cells = cell_of_tuple(ids, rel.cardinality, config.eta)
        scale = rel.cardinality / len(positions)
        row_bytes = rel.bytes_total / rel.cardinality * fraction
        per_cell = np.bincount(cells, minlength=config.side) * (scale * row_bytes)
        loads += per_cell @ pa.membership(dim)
    return loads[1:]


def estimate_job_selectivity(
    conds: Sequence[ThetaCondition],
    rels: Sequence[RelationStats],
    samples: Mapping[str, Columns],
    k_r: int,
    dup: Mapping[str, float],
    config: Optional[CubeConfig] = None,
    partitioner: str = "hilbert",
    seed: int = 0,
    needed: Optional[Mapping[str, Set[str]]] = None,
    join_selectivity: Optional[float] = None,
) -> JobSelectivity:
    """
    Estimate alpha, beta and sigma of one job.

    Args:
        conds: Conditions the job's reducers evaluate
        rels: Statistics of the job's relations, in cube dimension order
        samples: Sampled columns per relation name
        k_r: Component count
        dup: Duplication factor per relation name
        config: Cube of the job (derived from the cardinalities when omitted)
        partitioner: Partitioner used to spread sample tuples over components
        seed: Run seed; selects global ids and sub-samples
        needed: Attributes shipped per relation (all when omitted)
        join_selectivity: Sample selectivity already measured for the same
            conditions; skips the sample join

    Raises:
        EstimationError: If a nonempty relation has an empty sample or a
            condition references a relation outside `rels`
    """
    order = [r.relation for r in rels]
    for condition in conds:
        for name in condition.relations:
            if name not in order:
                raise EstimationError(
                    f"condition {condition.id} references '{name}' outside the job"
                )
    for rel in rels:
        sample = samples.get(rel.relation)
        sample_size = len(next(iter(sample.values()))) if sample else 0
        if rel.cardinality > 0 and sample_size == 0:
            raise EstimationError(f"empty sample for nonempty relation '{rel.relation}'")

    total_bytes = float(sum(r.bytes_total for r in rels))
    fractions = [
        needed_fraction(r, needed.get(r.relation) if needed else None) for r in rels
    ]
    if total_bytes > 0:
        alpha = (
            sum(
                r.bytes_total * f * dup.get(r.relation, 1.0)
                for r, f in zip(rels, fractions)
            )
            / total_bytes
        )
    else:
        alpha = 1.0

    if any(r.cardinality == 0 for r in rels):
        selectivity = 0.0
    elif join_selectivity is not None:
        selectivity = join_selectivity
    else:
        capped = _cap_samples(order, samples, seed)
        matches, _ = join_combinations(order, capped, conds)
        pairs = math.prod(len(next(iter(capped[n].values()))) for n in order)
        selectivity = len(matches) / pairs

    output_rows = selectivity * math.prod(r.cardinality for r in rels)
    reduce_input = alpha * total_bytes
    beta = 0.0
    if reduce_input > 0:
        beta = output_rows * ID_BYTES * len(rels) / reduce_input

    sigma = 0.0
    if k_r > 1 and all(r.cardinality > 0 for r in rels):
        if config is None:
            cards = [r.cardinality for r in rels]
            config = CubeConfig(cardinalities=cards, eta=choose_eta(cards))
        loads = _component_bytes(rels, config, k_r, fractions, partitioner, seed)
        sigma = float(loads.std())

    return JobSelectivity(
        alpha=alpha,
        beta=beta,
        sigma=sigma,
        join_selectivity=selectivity,
        output_rows=output_rows,
        k_r=k_r,
    )


def estimate_output_rows(sel: JobSelectivity, rels: Sequence[RelationStats]) -> float:
    return sel.join_selectivity * math.prod(r.cardinality for r in rels)


def referenced_attributes(
    conds: Iterable[ThetaCondition], projection: Iterable[object] = ()
) -> Dict[str, Set[str]]:
    """Attributes per relation touched by conditions and the projection."""
    needed: Dict[str, Set[str]] = {}
    for condition in conds:
        for side in (condition.left, condition.right):
            needed.setdefault(side.ref.relation, set()).add(side.ref.attribute)
    for ref in projection:
        needed.setdefault(ref.relation, set()).add(ref.attribute)  # type: ignore[attr-defined]
    return needed


def collect_stats(
    relations: Sequence[Relation], rate: float, seed: int
) -> List[RelationStats]:
    return [sample_relation(r, rate, seed) for r in relations]
