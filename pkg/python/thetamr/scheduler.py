"""Malleable-task scheduling of jobs and merge steps on a bounded worker pool."""

import itertools
import logging
import math
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from pydantic import BaseModel, Field

from thetamr.exceptions import PlanningError
from thetamr.types import MergeStep

logger = logging.getLogger(__name__)

EXHAUSTIVE_ALLOTMENTS = 4096
ALL_ORDERS_UP_TO = 5
HILL_CLIMB_ROUNDS = 32

Interval = Tuple[float, float, int]


class Placement(BaseModel):
    """Start time and worker allotment of one task."""

    start: float = Field(ge=0)
    allotment: int = Field(ge=1)
    duration: float = Field(ge=0)

    @property
    def finish(self) -> float:
        return self.start + self.duration


class Schedule(BaseModel):
    """Placements of all jobs and merges plus the resulting makespan."""

    jobs: Dict[str, Placement] = Field(description="Placement per job task id")
    merges: Dict[str, Placement] = Field(default_factory=dict)
    job_stage: float = Field(ge=0, description="Finish time of the last job")
    makespan: float = Field(ge=0, description="Finish time of the last task")


def earliest_start(
    placed: Sequence[Interval], ready: float, duration: float, width: int, k_p: int
) -> float:
    """Earliest t >= ready at which `width` workers stay free for `duration`."""
    candidates = sorted({ready} | {end for _, end, _ in placed if end > ready})
    for t in candidates:
        events = [t] + [s for s, _, _ in placed if t < s < t + duration]
        if all(
            sum(w for s, e, w in placed if s <= x < e) + width <= k_p for x in events
        ):
            return t
    raise PlanningError(f"task of width {width} cannot fit {k_p} workers")


def place(
    order: Sequence[str],
    durations: Mapping[str, float],
    allotments: Mapping[str, int],
    k_p: int,
) -> Tuple[float, Dict[str, float]]:
    """Earliest-fit list placement; returns (makespan, start per task)."""
    placed: List[Interval] = []
    starts: Dict[str, float] = {}
    for task in order:
        start = earliest_start(placed, 0.0, durations[task], allotments[task], k_p)
        starts[task] = start
        placed.append((start, start + durations[task], allotments[task]))
    makespan = max((end for _, end, _ in placed), default=0.0)
    return makespan, starts


def _orders(
    jobs: Sequence[str],
    durations: Mapping[str, float],
    allotments: Mapping[str, int],
):
    if len(jobs) <= ALL_ORDERS_UP_TO:
        return itertools.permutations(jobs)
    lpt = sorted(jobs, key=lambda j: (-durations[j], j))
    area = sorted(jobs, key=lambda j: (-durations[j] * allotments[j], j))
    return [lpt, area] if lpt != area else [lpt]


def best_placement(
    jobs: Sequence[str],
    tau: Mapping[str, Mapping[int, float]],
    allotments: Mapping[str, int],
    k_p: int,
    bound: float = math.inf,
) -> Tuple[float, Dict[str, float]]:
    """Best makespan over the candidate job orders for fixed allotments."""
    durations = {j: tau[j][allotments[j]] for j in jobs}
    lower = max(
        max(durations.values()),
        sum(durations[j] * allotments[j] for j in jobs) / k_p,
    )
    best: Tuple[float, Dict[str, float]] = (math.inf, {})
    if lower >= bound:
        return best
    for order in _orders(jobs, durations, allotments):
        makespan, starts = place(order, durations, allotments, k_p)
        if makespan < best[0]:
            best = (makespan, starts)
            if makespan <= lower:
                break
    return best


def undominated(allotments: Sequence[int], times: Mapping[int, float]) -> List[int]:
    """Allotments that are strictly faster than every smaller allotment."""
    kept: List[int] = []
    for a in sorted(allotments):
        if not kept or times[a] < times[kept[-1]]:
            kept.append(a)
    return kept


def _threshold_vectors(
    jobs: Sequence[str],
    domains: Mapping[str, List[int]],
    tau: Mapping[str, Mapping[int, float]],
) -> List[Dict[str, int]]:
    vectors = [
        {j: min(domains[j], key=lambda a: (tau[j][a], a)) for j in jobs},
        {j: domains[j][0] for j in jobs},
    ]
    for deadline in sorted({tau[j][a] for j in jobs for a in domains[j]}):
        vector = {}
        for j in jobs:
            fitting = [a for a in domains[j] if tau[j][a] <= deadline]
            if not fitting:
                break
            vector[j] = fitting[0]
        else:
            vectors.append(vector)
    return vectors


def choose_allotments(
    tau: Mapping[str, Mapping[int, float]], k_p: int
) -> Tuple[float, Dict[str, int], Dict[str, float]]:
    """
    Pick one allotment per job and the placement that minimises the makespan.

    Small allotment spaces are searched exhaustively with an area/critical
    path lower bound; larger ones start from the per-job optimum and every
    deadline threshold and are refined by single-job hill climbing.
    """
    jobs = sorted(tau)
    domains = {j: sorted(a for a in tau[j] if 1 <= a <= k_p) for j in jobs}
    for j in jobs:
        if not domains[j]:
            raise PlanningError(f"job {j} has no processing time within {k_p} workers")
        domains[j] = undominated(domains[j], tau[j])

    best_makespan, best_vector, best_starts = math.inf, {}, {}

    def consider(vector: Dict[str, int]) -> None:
        nonlocal best_makespan, best_vector, best_starts
        makespan, starts = best_placement(jobs, tau, vector, k_p, best_makespan)
        if makespan < best_makespan:
            best_makespan, best_vector, best_starts = makespan, dict(vector), starts

    space = math.prod(len(d) for d in domains.values())
    if space <= EXHAUSTIVE_ALLOTMENTS:
        for combo in itertools.product(*(domains[j] for j in jobs)):
            consider(dict(zip(jobs, combo)))
    else:
        for vector in _threshold_vectors(jobs, domains, tau):
            consider(vector)
        for _ in range(HILL_CLIMB_ROUNDS):
            before = best_makespan
            for j in jobs:
                for a in domains[j]:
                    if a != best_vector[j]:
                        consider({**best_vector, j: a})
            if best_makespan >= before:
                break
    logger.debug("Allotments %s give job makespan %.4g", best_vector, best_makespan)
    return best_makespan, best_vector, best_starts


def schedule_tasks(
    tau: Mapping[str, Mapping[int, float]],
    merges: Sequence[MergeStep],
    k_p: int,
) -> Schedule:
    """
    Schedule jobs, then the merge stage.

    Args:
        tau: Processing time per allotment, per job task id
        merges: Merge tree in execution order; `duration` must be set
        k_p: Worker budget

    Returns:
        Schedule with every job and merge placed

    Raises:
        PlanningError: If k_p < 1 or a job cannot run within k_p workers
    """
    if k_p < 1:
        raise PlanningError(f"worker budget k_p={k_p} must be at least 1")
    if not tau:
        raise PlanningError("nothing to schedule")
    job_stage, allotments, starts = choose_allotments(tau, k_p)
    schedule = Schedule(
        jobs={
            j: Placement(start=starts[j], allotment=a, duration=tau[j][a])
            for j, a in allotments.items()
        },
        job_stage=job_stage,
        makespan=job_stage,
    )

    placed: List[Interval] = []
    finish: Dict[str, float] = {}
    for merge in merges:
        ready = max(
            [job_stage] + [finish[t] for t in (merge.left, merge.right) if t in finish]
        )
        start = earliest_start(placed, ready, merge.duration, merge.allotment, k_p)
        placed.append((start, start + merge.duration, merge.allotment))
        finish[merge.task_id] = start + merge.duration
        schedule.merges[merge.task_id] = Placement(
            start=start, allotment=merge.allotment, duration=merge.duration
        )
    schedule.makespan = max([job_stage] + list(finish.values()))
    return schedule


def check_schedule(
    intervals: Sequence[Tuple[str, float, float, int]],
    precedence: Sequence[Tuple[str, str]],
    k_p: int,
) -> Optional[str]:
    """Sweep event points; return a violation description or None."""
    by_id = {task: (start, end) for task, start, end, _ in intervals}
    for x in sorted({start for _, start, _, _ in intervals}):
        used = sum(w for _, s, e, w in intervals if s <= x < e)
        if used > k_p:
            return f"{used} workers busy at t={x:.6g} with k_p={k_p}"
    for before, after in precedence:
        if by_id[after][0] < by_id[before][1]:
            return f"{after} starts before {before} finishes"
    return None
