"""Join-path graph construction, pruning, cover selection and plan assembly."""

import itertools
import logging
import math
from typing import (
    Dict,
    FrozenSet,
    Iterator,
    List,
    Mapping,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
)

from thetamr.cost_model import job_time, merge_cost
from thetamr.exceptions import PlanningError
from thetamr.partitioners import choose_eta, choose_k_r, delta_sweep, duplication_factor
from thetamr.relational import JoinGraph, Query, build_join_graph
from thetamr.scheduler import schedule_tasks
from thetamr.statistics import (
    Columns,
    draw_sample,
    estimate_job_selectivity,
    referenced_attributes,
    sample_relation,
)
from thetamr.types import (
    CalibrationProfile,
    CubeConfig,
    ExecutionPlan,
    JobCandidate,
    JobSelectivity,
    MergeStep,
    MrjCostEstimate,
    PlannedJob,
    PlannerOptions,
    PrunedJoinPathGraph,
    PruneRecord,
    RelationStats,
    ThetaCondition,
)

logger = logging.getLogger(__name__)

WITNESS_LIMIT = 3


class Trail(NamedTuple):
    """A no-edge-repeating walk: condition ids and the vertices they join."""

    edges: Tuple[int, ...]
    vertices: Tuple[str, ...]

    @property
    def relations(self) -> Tuple[str, ...]:
        return tuple(dict.fromkeys(self.vertices))

    @property
    def key(self) -> Tuple[FrozenSet[int], FrozenSet[str]]:
        return frozenset(self.edges), frozenset(self.vertices)


def _extend(g: JoinGraph, trail: Trail) -> Iterator[Trail]:
    used = set(trail.edges)
    for neighbour, edge in g.incident(trail.vertices[-1]):
        if edge not in used:
            yield Trail(trail.edges + (edge,), trail.vertices + (neighbour,))


def _initial_trails(g: JoinGraph) -> List[Trail]:
    trails = []
    for vertex in g.vertices:
        for neighbour, edge in g.incident(vertex):
            trails.append(Trail((edge,), (vertex, neighbour)))
    return trails


def _is_candidate(g: JoinGraph, trail: Trail, rank: Mapping[str, int]) -> bool:
    return rank[trail.vertices[0]] < rank[trail.vertices[-1]]


def _trail_order(rank: Mapping[str, int]):
    return lambda t: (len(t.edges), rank[t.vertices[0]], rank[t.vertices[-1]], t.edges)


def enumerate_join_paths(g: JoinGraph, max_len: int) -> List[Trail]:
    """
    Every no-edge-repeating path between vertex pairs i < j, up to max_len hops.

    Paths with the same condition set over the same relations are reported
    once. Ordered by (hops, vertex pair, path).
    """
    if max_len < 1:
        raise PlanningError(f"max_len={max_len} must be at least 1")
    rank = {v: i for i, v in enumerate(g.vertices)}
    found: Dict[Tuple[FrozenSet[int], FrozenSet[str]], Trail] = {}
    frontier = _initial_trails(g)
    for hops in range(1, max_len + 1):
        for trail in sorted(frontier, key=_trail_order(rank)):
            if _is_candidate(g, trail, rank) and trail.key not in found:
                found[trail.key] = trail
        if hops < max_len:
            frontier = [longer for trail in frontier for longer in _extend(g, trail)]
    return sorted(found.values(), key=_trail_order(rank))


class JobEstimator:
    """Costs jobs over relation subsets from sampled statistics."""

    def __init__(
        self,
        query: Query,
        stats: Mapping[str, RelationStats],
        profile: CalibrationProfile,
        options: Optional[PlannerOptions] = None,
        samples: Optional[Mapping[str, Columns]] = None,
    ):
        self.query = query
        self.stats = dict(stats)
        self.profile = profile
        self.options = options or PlannerOptions()
        self.samples = dict(samples) if samples is not None else {
            r.name: draw_sample(r, self.stats[r.name]) for r in query.relations
        }
        self.graph = build_join_graph(query)
        self._selectivity: Dict[Tuple[Tuple[str, ...], int], JobSelectivity] = {}
        self._k_r: Dict[Tuple[str, ...], int] = {}
        self._join: Dict[Tuple[str, ...], float] = {}
        self._sweep: Dict[Tuple[str, ...], Dict[int, MrjCostEstimate]] = {}

    def config_for(self, order: Sequence[str]) -> CubeConfig:
        cards = [max(1, self.stats[name].cardinality) for name in order]
        eta = choose_eta(cards, self.options.max_cells, self.options.eta_max)
        return CubeConfig(cardinalities=cards, eta=eta)

    def conditions_for(self, order: Sequence[str]) -> List[ThetaCondition]:
        return [self.query.condition(i) for i in self.graph.conditions_among(order)]

    def input_bytes(self, order: Sequence[str]) -> int:
        return sum(self.stats[name].bytes_total for name in order)

    def k_r_for(self, order: Sequence[str]) -> int:
        key = tuple(order)
        if key not in self._k_r:
            self._k_r[key] = choose_k_r(
                self.config_for(order),
                self.options.lambda_,
                self.options.k_max,
                self.options.partitioner,
            )
        return self._k_r[key]

    def delta_table(self, order: Sequence[str]) -> List[Tuple[int, float, int]]:
        return delta_sweep(
            self.config_for(order),
            self.options.lambda_,
            self.options.k_max,
            self.options.partitioner,
        )

    def selectivity(self, order: Sequence[str], k_r: int) -> JobSelectivity:
        key = (tuple(order), k_r)
        if key not in self._selectivity:
            config = self.config_for(order)
            conds = self.conditions_for(order)
            dup = {
                name: duplication_factor(
                    config, k_r, dim, self.options.partitioner, warn=False
                ).value
                for dim, name in enumerate(order)
            }
            self._selectivity[key] = estimate_job_selectivity(
                conds,
                [self.stats[name] for name in order],
                self.samples,
                k_r,
                dup,
                config=config,
                partitioner=self.options.partitioner,
                seed=self.options.seed,
                needed=referenced_attributes(conds),
                join_selectivity=self._join.get(tuple(order)),
            )
        self._join.setdefault(tuple(order), self._selectivity[key].join_selectivity)
        return self._selectivity[key]

    def estimate(
        self, order: Sequence[str], k_r: int, map_slots: Optional[int] = None
    ) -> MrjCostEstimate:
        return job_time(
            self.profile,
            self.input_bytes(order),
            k_r,
            self.selectivity(order, k_r),
            map_slots,
        )

    def cost_sweep(self, order: Sequence[str]) -> Dict[int, MrjCostEstimate]:
        """Unconstrained job cost for every reduce count in [1, min(k_max, cells)]."""
        key = tuple(order)
        if key not in self._sweep:
            upper = min(self.options.k_max, self.config_for(order).total_cells)
            self._sweep[key] = {n: self.estimate(order, n) for n in range(1, upper + 1)}
        return self._sweep[key]

    def candidate(self, trail: Trail) -> JobCandidate:
        """
        A fully costed candidate for one trail.

        `w` is the cheapest cost over all reduce counts and `s` the count
        reaching it (the lowest on ties); `k_r` is the duplication/workload
        choice used for partition explanations.
        """
        relations = list(trail.relations)
        covered = self.graph.conditions_among(relations)
        sweep = self.cost_sweep(relations)
        s = min(sweep, key=lambda n: (sweep[n].total, n))
        cost = sweep[s]
        return JobCandidate(
            path=list(trail.edges),
            relations=relations,
            conds=sorted(trail.edges),
            residual_conds=[c for c in covered if c not in trail.edges],
            w=float(cost.total),
            s=s,
            k_r=self.k_r_for(relations),
            selectivity=self.selectivity(relations, s),
            cost=cost,
        )

    def tau(self, candidate: JobCandidate, k_p: int) -> Dict[int, float]:
        """Processing time per worker allotment, for allotments 1..k_p."""
        config = self.config_for(candidate.relations)
        table = {}
        for a in range(1, min(k_p, config.total_cells) + 1):
            estimate = self.estimate(
                candidate.relations, a, map_slots=min(self.profile.map_slots, a)
            )
            table[a] = float(estimate.total)
        return table


def check_dominated(
    c: JobCandidate, others: Sequence[JobCandidate]
) -> Tuple[bool, List[JobCandidate]]:
    """
    Test whether a cheaper collection makes `c` redundant.

    Returns (keep, witness). `c` is pruned when at most three other
    candidates jointly cover its conditions, each costs strictly less, and
    together they use no more reduce tasks.
    """
    if c.hops == 1:
        return True, []
    target = c.covered
    useful = sorted(
        (
            o
            for o in others
            if o is not c and o.w < c.w and o.s <= c.s and o.covered & target
        ),
        key=lambda o: o.sort_key(),
    )
    for size in range(1, WITNESS_LIMIT + 1):
        for combo in itertools.combinations(useful, size):
            if sum(o.s for o in combo) > c.s:
                continue
            union: FrozenSet[int] = frozenset().union(*(o.covered for o in combo))
            if target <= union:
                return False, list(combo)
    return True, []


def verify_dominance_witness(record: PruneRecord) -> bool:
    """Independently re-check the three conditions of a dominance record."""
    witness = record.witness
    if record.rule != "dominated" or not 1 <= len(witness) <= WITNESS_LIMIT:
        return False
    covered = set()
    for member in witness:
        covered |= set(member.conds) | set(member.residual_conds)
    target = set(record.candidate.conds) | set(record.candidate.residual_conds)
    return (
        target <= covered
        and record.candidate.w > max(member.w for member in witness)
        and record.candidate.s >= sum(member.s for member in witness)
    )


def build_pruned_graph(
    g: JoinGraph,
    stats: Mapping[str, RelationStats],
    profile: CalibrationProfile,
    max_len: int = 6,
    options: Optional[PlannerOptions] = None,
    estimator: Optional[JobEstimator] = None,
    prune: bool = True,
    single_edge_only: bool = False,
) -> PrunedJoinPathGraph:
    """
    Build the join-path graph, pruning redundant candidates on the fly.

    Candidates are costed and inserted hop level by hop level; each new
    candidate is tested against the current worklist, and paths whose
    prefix was pruned are not extended.

    Args:
        g: Join graph of the query
        stats: Statistics per relation name
        profile: Calibration profile for costing
        max_len: Hop cap for paths
        options: Planner options
        estimator: Shared estimator (built from `g.query` when omitted)
        prune: Apply the pruning rules
        single_edge_only: Keep single-condition candidates only

    Raises:
        PlanningError: If max_len < 1
    """
    if max_len < 1:
        raise PlanningError(f"max_len={max_len} must be at least 1")
    estimator = estimator or JobEstimator(g.query, stats, profile, options)
    if single_edge_only:
        max_len = 1
    rank = {v: i for i, v in enumerate(g.vertices)}
    order = _trail_order(rank)

    survivors: List[JobCandidate] = []
    records: List[PruneRecord] = []
    status: Dict[Tuple[FrozenSet[int], FrozenSet[str]], bool] = {}
    frontier = _initial_trails(g)

    for hops in range(1, max_len + 1):
        fresh: Dict[Tuple[FrozenSet[int], FrozenSet[str]], JobCandidate] = {}
        for trail in sorted(frontier, key=order):
            if _is_candidate(g, trail, rank) and trail.key not in status:
                if trail.key not in fresh:
                    fresh[trail.key] = estimator.candidate(trail)
        for key, candidate in sorted(fresh.items(), key=lambda kv: kv[1].sort_key()):
            keep = True
            witness: List[JobCandidate] = []
            if prune:
                keep, witness = check_dominated(candidate, survivors)
            status[key] = keep
            if keep:
                survivors.append(candidate)
                survivors.sort(key=lambda c: c.sort_key())
            else:
                records.append(
                    PruneRecord(candidate=candidate, rule="dominated", witness=witness)
                )
                logger.debug(
                    "Pruned %s (dominated) by %s",
                    candidate.label,
                    [w.label for w in witness],
                )
        if hops < max_len:
            frontier = [
                longer
                for trail in frontier
                if status.get(trail.key, True)
                for longer in _extend(g, trail)
            ]

    if prune:
        survivors, late = _final_pass(survivors, records)
        records.extend(late)

    return PrunedJoinPathGraph(
        candidates=sorted(survivors, key=lambda c: c.sort_key()),
        universe=g.labels,
        pruned=records,
    )


def _final_pass(
    survivors: List[JobCandidate], records: List[PruneRecord]
) -> Tuple[List[JobCandidate], List[PruneRecord]]:
    late: List[PruneRecord] = []
    changed = True
    while changed:
        changed = False
        for candidate in sorted(survivors, key=lambda c: (-c.w, c.path)):
            rest = [o for o in survivors if o is not candidate]
            keep, witness = check_dominated(candidate, rest)
            if not keep:
                survivors = rest
                late.append(
                    PruneRecord(candidate=candidate, rule="dominated", witness=witness)
                )
                changed = True
                break

    victims = [r.candidate for r in records + late if r.rule == "dominated"]
    kept = []
    for candidate in survivors:
        inside = [
            v for v in victims if candidate.hops > 1 and v.covered < candidate.covered
        ]
        if inside:
            late.append(
                PruneRecord(
                    candidate=candidate, rule="extends-dominated", witness=inside[:1]
                )
            )
            logger.debug(
                "Pruned %s (extends dominated %s)", candidate.label, inside[0].label
            )
        else:
            kept.append(candidate)
    return kept, late


def select_cover(graph: PrunedJoinPathGraph) -> List[JobCandidate]:
    """
    Greedy weighted set cover over the condition ids.

    Repeatedly takes the candidate with the lowest cost per newly covered
    condition; ties go to fewer relations, then the lexicographically
    smaller path.
    """
    uncovered = set(graph.universe)
    chosen: List[JobCandidate] = []
    while uncovered:
        best = None
        best_key = None
        for candidate in graph.candidates:
            new = candidate.covered & uncovered
            if not new:
                continue
            key = (
                candidate.w / len(new),
                len(candidate.relations),
                tuple(candidate.path),
            )
            if best_key is None or key < best_key:
                best, best_key = candidate, key
        if best is None:
            raise PlanningError(
                f"conditions {sorted(uncovered)} are not covered by any candidate"
            )
        chosen.append(best)
        uncovered -= best.covered
    return chosen


class _MergeNode(NamedTuple):
    task_id: str
    relations: FrozenSet[str]
    rows: float


def plan_merges(
    outputs: Sequence[Tuple[str, Sequence[str], float]],
    cardinalities: Mapping[str, int],
    profile: CalibrationProfile,
    relation_order: Sequence[str],
) -> List[MergeStep]:
    """
    Pair task outputs sharing relations, smallest estimated result first.

    Args:
        outputs: (task id, relations, estimated rows) per job
        cardinalities: |R| per relation name
        profile: Profile supplying the merge cost per byte
        relation_order: Declaration order used to list keys and relations

    Raises:
        PlanningError: If some outputs share no relation with the rest
    """
    rank = {name: i for i, name in enumerate(relation_order)}
    nodes = [_MergeNode(t, frozenset(r), float(rows)) for t, r, rows in outputs]
    steps: List[MergeStep] = []
    while len(nodes) > 1:
        best = None
        for a, b in itertools.combinations(nodes, 2):
            shared = a.relations & b.relations
            if not shared:
                continue
            rows = a.rows * b.rows / math.prod(max(1, cardinalities[n]) for n in shared)
            key = (rows, a.task_id, b.task_id)
            if best is None or key < best[0]:
                best = (key, a, b, shared, rows)
        if best is None:
            raise PlanningError("job outputs share no relation; cannot merge")
        _, a, b, shared, rows = best
        relations = a.relations | b.relations
        step = MergeStep(
            task_id=f"M{len(steps) + 1}",
            left=a.task_id,
            right=b.task_id,
            keys=sorted(shared, key=rank.__getitem__),
            relations=sorted(relations, key=rank.__getitem__),
            est_rows=rows,
            duration=float(
                merge_cost(profile, a.rows, len(a.relations), b.rows, len(b.relations))
            ),
        )
        steps.append(step)
        nodes = [n for n in nodes if n not in (a, b)]
        nodes.append(_MergeNode(step.task_id, relations, rows))
    return steps


def schedule_jobs(
    jobs: Sequence[JobCandidate],
    k_p: int,
    profile: CalibrationProfile,
    estimator: JobEstimator,
    strategy: str = "theta",
) -> ExecutionPlan:
    """
    Re-estimate each job under the worker budget and schedule jobs and merges.

    Each job's processing time per allotment a assumes a reduce tasks and
    min(map_slots, a) concurrent map tasks.
    """
    if k_p < 1:
        raise PlanningError(f"worker budget k_p={k_p} must be at least 1")
    task_ids = [f"J{i}" for i in range(1, len(jobs) + 1)]
    tau = {t: estimator.tau(job, k_p) for t, job in zip(task_ids, jobs)}

    outputs = [
        (t, job.relations, estimator.selectivity(job.relations, job.k_r).output_rows)
        for t, job in zip(task_ids, jobs)
    ]
    cardinalities = {name: s.cardinality for name, s in estimator.stats.items()}
    merges = plan_merges(outputs, cardinalities, profile, estimator.query.names)
    schedule = schedule_tasks(tau, merges, k_p)

    planned = []
    for t, job in zip(task_ids, jobs):
        placement = schedule.jobs[t]
        planned.append(
            PlannedJob(
                task_id=t,
                candidate=job,
                tau=tau[t],
                allotment=placement.allotment,
                start=placement.start,
                duration=placement.duration,
            )
        )
    placed_merges = [
        m.model_copy(update={"start": schedule.merges[m.task_id].start}) for m in merges
    ]
    return ExecutionPlan(
        jobs=planned,
        merges=placed_merges,
        makespan=schedule.makespan,
        k_p=k_p,
        universe=estimator.graph.labels,
        strategy=strategy,
        seed=estimator.options.seed,
    )


class PlanningResult(NamedTuple):
    """A plan plus the intermediate products `explain` reports."""

    plan: ExecutionPlan
    graph: PrunedJoinPathGraph
    estimator: JobEstimator
    alternatives: Dict[str, float]


class Planner:
    """Plans a query end to end."""

    def __init__(
        self,
        query: Query,
        k_p: int,
        profile: CalibrationProfile,
        options: Optional[PlannerOptions] = None,
        stats: Optional[Mapping[str, RelationStats]] = None,
    ):
        if k_p < 1:
            raise PlanningError(f"worker budget k_p={k_p} must be at least 1")
        self.query = query
        self.k_p = k_p
        self.profile = profile
        self.options = options or PlannerOptions()
        if self.options.max_len < 1:
            raise PlanningError(f"max_len={self.options.max_len} must be at least 1")
        if stats is None:
            stats = {
                r.name: sample_relation(r, self.options.sample_rate, self.options.seed)
                for r in query.relations
            }
        self.estimator = JobEstimator(query, stats, profile, self.options)

    def plan(self) -> PlanningResult:
        g = self.estimator.graph
        stats = self.estimator.stats
        if self.options.baseline == "pairwise":
            graph = build_pruned_graph(
                g,
                stats,
                self.profile,
                1,
                self.options,
                self.estimator,
                single_edge_only=True,
            )
            plan = schedule_jobs(
                select_cover(graph), self.k_p, self.profile, self.estimator, "pairwise"
            )
            alternatives = {"pairwise": plan.makespan}
        else:
            graph = build_pruned_graph(
                g,
                stats,
                self.profile,
                self.options.max_len,
                self.options,
                self.estimator,
            )
            theta = schedule_jobs(
                select_cover(graph), self.k_p, self.profile, self.estimator, "theta"
            )
            singles = graph.model_copy(
                update={"candidates": [c for c in graph.candidates if c.hops == 1]}
            )
            pairwise = schedule_jobs(
                select_cover(singles),
                self.k_p,
                self.profile,
                self.estimator,
                "pairwise",
            )
            alternatives = {"theta": theta.makespan, "pairwise": pairwise.makespan}
            plan = theta if theta.makespan <= pairwise.makespan else pairwise
        logger.info(
            "Chose %s plan: %d job(s) %s, %d merge(s), makespan %.4g s",
            plan.strategy,
            len(plan.jobs),
            [j.candidate.label for j in plan.jobs],
            len(plan.merges),
            plan.makespan,
        )
        return PlanningResult(plan, graph, self.estimator, alternatives)


def plan_query(
    q: Query,
    k_p: int,
    profile: CalibrationProfile,
    options: Optional[PlannerOptions] = None,
    stats: Optional[Mapping[str, RelationStats]] = None,
) -> ExecutionPlan:
    """Plan a query: join graph, pruned join-path graph, cover, schedule."""
    return Planner(q, k_p, profile, options, stats).plan().plan
