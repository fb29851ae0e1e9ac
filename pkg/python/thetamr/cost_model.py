"""Execution-time model of a single map/reduce job."""

import math
from bisect import bisect_right
from typing import Any, Optional, Sequence, Tuple

from thetamr.types import ID_BYTES, CalibrationProfile, JobSelectivity, MrjCostEstimate

Number = Any


def lookup(knots: Sequence[Tuple[Number, Number]], x: Number) -> Number:
    """Piecewise-linear interpolation, clamped beyond the end knots."""
    if x <= knots[0][0]:
        return knots[0][1]
    if x >= knots[-1][0]:
        return knots[-1][1]
    i = bisect_right([k[0] for k in knots], x)
    (x0, y0), (x1, y1) = knots[i - 1], knots[i]
    return y0 + (y1 - y0) * (x - x0) / (x1 - x0)


def waves(m: int, map_slots: int) -> int:
    """Rounds of map tasks: ceil(m / m')."""
    return -(-m // map_slots)


def derive_map_tasks(profile: CalibrationProfile, s_i: Number) -> int:
    return max(1, math.ceil(s_i / profile.block_size))


def map_task_cost(
    profile: CalibrationProfile, s_i: Number, m: int, alpha: Number
) -> Number:
    """(c1 + p * alpha) * s_i / m, with p looked up at the per-map spill volume."""
    per_map = s_i / m
    p = lookup(profile.p_table, alpha * per_map)
    return (profile.c1 + p * alpha) * per_map


def map_phase_cost(
    profile: CalibrationProfile, t_m: Number, m: int, map_slots: Optional[int] = None
) -> Number:
    return t_m * waves(m, map_slots or profile.map_slots)


def copy_costs(
    profile: CalibrationProfile,
    s_i: Number,
    m: int,
    n: int,
    alpha: Number,
    map_slots: Optional[int] = None,
) -> Tuple[Number, Number]:
    """(t_cp, j_cp): one map's copy to n reducers, and the whole copy phase."""
    t_cp = profile.c2 * (alpha * s_i) / (n * m) + lookup(profile.q_table, n) * n
    return t_cp, t_cp * waves(m, map_slots or profile.map_slots)


def reduce_phase_cost(
    profile: CalibrationProfile,
    s_i: Number,
    n: int,
    alpha: Number,
    beta: Number,
    sigma: Number,
) -> Tuple[Number, Number]:
    """(S*_r, j_r): the largest reduce input under three sigmas, and its cost."""
    s_r_star = alpha * s_i / n + 3 * sigma
    p = lookup(profile.p_table, s_r_star)
    return s_r_star, (p + beta * profile.c1) * s_r_star


def mrj_total_time(
    profile: CalibrationProfile,
    s_i: Number,
    m: int,
    n: int,
    alpha: Number,
    beta: Number,
    sigma: Number,
    map_slots: Optional[int] = None,
) -> MrjCostEstimate:
    """
    Estimate one job's execution time.

    The copy of one map overlaps the next map wave, so the slower of map and
    copy drives the pipeline: `j_m + t_cp + j_r` when maps dominate, else
    `t_m + j_cp + j_r`.
    """
    slots = map_slots or profile.map_slots
    t_m = map_task_cost(profile, s_i, m, alpha)
    j_m = map_phase_cost(profile, t_m, m, slots)
    t_cp, j_cp = copy_costs(profile, s_i, m, n, alpha, slots)
    s_r_star, j_r = reduce_phase_cost(profile, s_i, n, alpha, beta, sigma)
    if t_m >= t_cp:
        total = (j_m + t_cp) + j_r
    else:
        total = (t_m + j_cp) + j_r
    return MrjCostEstimate.model_construct(
        s_i=s_i,
        m=m,
        n=n,
        t_m=t_m,
        j_m=j_m,
        t_cp=t_cp,
        j_cp=j_cp,
        s_r_star=s_r_star,
        j_r=j_r,
        total=total,
    )


def job_time(
    profile: CalibrationProfile,
    s_i: Number,
    n: int,
    selectivity: JobSelectivity,
    map_slots: Optional[int] = None,
) -> MrjCostEstimate:
    """mrj_total_time with m derived from the block size."""
    return mrj_total_time(
        profile,
        s_i,
        derive_map_tasks(profile, s_i),
        n,
        selectivity.alpha,
        selectivity.beta,
        selectivity.sigma,
        map_slots,
    )


def merge_cost(
    profile: CalibrationProfile,
    left_rows: Number,
    left_width: int,
    right_rows: Number,
    right_width: int,
) -> Number:
    """Seconds to hash-join two id-tagged inputs; linear in their id bytes."""
    id_bytes = ID_BYTES * (left_rows * left_width + right_rows * right_width)
    return profile.merge_cost_per_byte * id_bytes
