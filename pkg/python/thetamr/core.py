"""Core thetamr functionality."""

import json
import logging
import os
from pathlib import Path
from typing import (
    Any,
    Dict,
    List,
    Mapping,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
    Union,
)

from thetamr.cache import StatsCache
from thetamr.exceptions import ConfigurationError, QueryError
from thetamr.partitioners import duplication_factor
from thetamr.planner import Planner, PlanningResult
from thetamr.relational import Query, Relation, parse_query
from thetamr.runtime import JobOutput, Runtime, brute_force_join, format_rows
from thetamr.types import (
    CalibrationProfile,
    ExecutionPlan,
    PlannerOptions,
    RelationStats,
    RunReport,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class RunResult(NamedTuple):
    """Everything one execution produced."""

    plan: ExecutionPlan
    output: JobOutput
    rows: List[Tuple[Any, ...]]
    report: RunReport


class ThetaJoinEngine:
    """Main class for planning and running multi-way theta-join queries."""

    def __init__(
        self,
        k_p: int = 16,
        profile: Optional[CalibrationProfile] = None,
        calibration: Optional[PathLike] = None,
        options: Optional[PlannerOptions] = None,
        relation_path: Sequence[PathLike] = (),
        stats_cache: Optional[StatsCache] = None,
        fresh_stats: bool = False,
        scratch_dir: Optional[PathLike] = None,
    ):
        """
        Initialize the engine.

        Args:
            k_p: Worker budget for planning and execution
            profile: Calibration profile (overrides `calibration`)
            calibration: Path of a calibration profile; the THETAMR_CALIBRATION
                environment variable is used when omitted
            options: Planner options
            relation_path: Directories searched for relation files
            stats_cache: Statistics cache (a sidecar-backed one by default)
            fresh_stats: Resample statistics even when cached
            scratch_dir: Directory for reducer spill files
        """
        if k_p < 1:
            raise ConfigurationError(f"k_p={k_p} must be at least 1")
        self.k_p = k_p
        self.options = options or PlannerOptions()
        self.relation_path = list(relation_path)
        self.cache = stats_cache or StatsCache()
        self.fresh_stats = fresh_stats
        self.scratch_dir = scratch_dir
        self.last_report: Optional[RunReport] = None

        calibration = calibration or os.getenv("THETAMR_CALIBRATION")
        if profile is not None:
            self.profile = profile
        elif calibration:
            self.profile = CalibrationProfile.load(calibration)
        else:
            logger.info("No calibration profile given; using synthetic defaults")
            self.profile = CalibrationProfile.default(k_p)

    def load_query(self, path: PathLike) -> Query:
        """Read and parse a query file, resolving relations next to it first."""
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise QueryError(f"Cannot read query {path}: {e}")
        return parse_query(text, base_dir=path.parent, search_path=self.relation_path)

    def parse(
        self,
        text: str,
        base_dir: Optional[PathLike] = None,
        catalog: Optional[Mapping[str, Relation]] = None,
    ) -> Query:
        return parse_query(
            text, base_dir=base_dir, search_path=self.relation_path, catalog=catalog
        )

    def statistics(self, query: Query) -> Dict[str, RelationStats]:
        """Statistics per relation, sampled lazily and cached in sidecars."""
        return {
            r.name: self.cache.stats_for(
                r, self.options.sample_rate, self.options.seed, fresh=self.fresh_stats
            )
            for r in query.relations
        }

    def plan(self, query: Query) -> PlanningResult:
        planner = Planner(
            query, self.k_p, self.profile, self.options, self.statistics(query)
        )
        return planner.plan()

    def runtime(self, query: Query) -> Runtime:
        return Runtime(
            query.catalog,
            query.conditions,
            self.profile,
            self.options.seed,
            self.options,
            self.scratch_dir,
        )

    def run(self, query: Query, plan: Optional[ExecutionPlan] = None) -> RunResult:
        """
        Plan (unless a plan is given) and execute a query.

        Returns:
            RunResult with the id-level output, projected rows and report
        """
        plan = plan or self.plan(query).plan
        runtime = self.runtime(query)
        try:
            output, report = runtime.run_plan(plan)
        except Exception:
            self.last_report = runtime.last_report
            raise
        self.last_report = report
        rows = runtime.project(output.canonical(query.names), query.projection)
        return RunResult(plan, output, rows, report)

    def verify(self, query: Query, output: JobOutput) -> bool:
        """
        Compare an output with the brute-force oracle.

        Raises:
            OracleGuardError: If the query is too large for the oracle
        """
        return output.equals(brute_force_join(query, self.options.seed))

    def render_rows(self, query: Query, rows: Sequence[Tuple[Any, ...]]) -> str:
        kinds = [
            query.relation(ref.relation).schema.type_of(ref.attribute)
            for ref in query.projection
        ]
        return format_rows(rows, kinds)

    def dump_partition(self, query: Query, plan: ExecutionPlan, path: PathLike) -> None:
        """Write the partition of every planned job as JSON."""
        runtime = self.runtime(query)
        document = []
        for job in plan.jobs:
            pa = runtime.partition_for(job.candidate, job.k_r)
            document.append({"task_id": job.task_id, **pa.to_dump()})
        Path(path).write_text(json.dumps(document, indent=2), encoding="utf-8")

    def explain(self, query: Query, result: Optional[PlanningResult] = None) -> str:
        result = result or self.plan(query)
        return render_explain(result)


def render_plan(plan: ExecutionPlan) -> str:
    """Text rendering of a plan: one line per job and merge."""
    lines = [
        f"plan ({plan.strategy}): {len(plan.jobs)} job(s), {len(plan.merges)} merge(s), "
        f"k_p={plan.k_p}, makespan={plan.makespan:.6g}s",
        f"{'task':<6}{'conditions':<16}{'relations':<28}{'workers':>8}{'start':>12}{'time':>12}",
    ]
    for job in plan.jobs:
        lines.append(
            f"{job.task_id:<6}{job.candidate.label:<16}{','.join(job.candidate.relations):<28}"
            f"{job.allotment:>8}{job.start:>12.4g}{job.duration:>12.4g}"
        )
    for merge in plan.merges:
        lines.append(
            f"{merge.task_id:<6}{merge.left + '+' + merge.right:<16}"
            f"{'on ' + ','.join(merge.keys):<28}{merge.allotment:>8}"
            f"{merge.start:>12.4g}{merge.duration:>12.4g}"
        )
    return "\n".join(lines)


def render_explain(result: PlanningResult) -> str:
    """Plan, pruning decisions, duplication factors and reduce-count sweeps."""
    plan, graph, estimator = result.plan, result.graph, result.estimator
    lines = [render_plan(plan), ""]
    alternatives = result.alternatives.items()
    lines.append(
        "alternatives: " + ", ".join(f"{k}={v:.6g}s" for k, v in alternatives)
    )
    lines.append("")
    lines.append(
        f"candidates kept: {len(graph.candidates)}, pruned: {len(graph.pruned)}"
    )
    for candidate in graph.candidates:
        lines.append(
            f"  keep {candidate.label:<16} w={candidate.w:.4g} s={candidate.s} "
            f"path={'-'.join(candidate.relations)}"
        )
    for record in graph.pruned:
        lines.append(
            f"  drop {record.candidate.label:<16} {record.rule} by "
            + " ".join(w.label for w in record.witness)
        )

    for job in plan.jobs:
        order = job.candidate.relations
        config = estimator.config_for(order)
        lines.append("")
        lines.append(
            f"{job.task_id} {job.candidate.label}: cube {config.cardinalities} "
            f"eta={config.eta}, k_r={job.k_r}"
        )
        for dim, name in enumerate(order):
            dup = duplication_factor(
                config, job.k_r, dim, estimator.options.partitioner, warn=False
            )
            flag = "" if dup.exact else " (measured)"
            lines.append(f"  dup[{name}] = {dup.value:.4g}{flag}")
        lines.append(f"  {'k_r':>5}{'delta':>16}{'score':>12}")
        for k_r, delta, score in estimator.delta_table(order):
            lines.append(f"  {k_r:>5}{delta:>16.6g}{score:>12}")
    return "\n".join(lines)


def engine(
    k_p: int = 16,
    calibration: Optional[PathLike] = None,
    **kwargs: Any,
) -> ThetaJoinEngine:
    """
    Create a theta-join engine.

    Args:
        k_p: Worker budget
        calibration: Calibration profile path
        **kwargs: Further ThetaJoinEngine arguments

    Returns:
        ThetaJoinEngine instance

    Example:
        >>> from thetamr import engine
        >>> e = engine(k_p=8)
        >>> q = e.load_query("itinerary.q")
        >>> result = e.run(q)
        >>> print(len(result.rows))
    """
    return ThetaJoinEngine(k_p=k_p, calibration=calibration, **kwargs)
