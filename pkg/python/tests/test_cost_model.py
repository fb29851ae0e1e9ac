"""Tests for the single-job execution-time model."""

from fractions import Fraction as F

import numpy as np
import pytest
from pydantic import ValidationError
from thetamr.cost_model import (
    copy_costs,
    derive_map_tasks,
    job_time,
    lookup,
    map_phase_cost,
    map_task_cost,
    merge_cost,
    mrj_total_time,
    reduce_phase_cost,
    waves,
)
from thetamr.types import CalibrationProfile, JobSelectivity


def exact_profile(**overrides):
    """Profile in exact rational units: c1=0.01, c2=0.02, p=0.005, q=0.01."""
    values = dict(
        c1=F(1, 100),
        c2=F(2, 100),
        p_table=[(F(0), F(5, 1000))],
        q_table=[(F(1), F(1, 100))],
        block_size=64,
        map_slots=25,
        merge_cost_per_byte=F(1, 1000),
        reducer_memory_cap=1 << 20,
        source="test",
        low_confidence=False,
    )
    values.update(overrides)
    return CalibrationProfile.model_construct(**values)


def random_profile(rng):
    p = sorted(F(int(v), 10_000) for v in rng.integers(1, 100, size=3))
    q = sorted(F(int(v), 10_000) for v in rng.integers(1, 100, size=3))
    return exact_profile(
        c1=F(int(rng.integers(1, 50)), 1000),
        c2=F(int(rng.integers(1, 50)), 1000),
        p_table=[(F(0), p[0]), (F(100), p[1]), (F(10_000), p[2])],
        q_table=[(F(1), q[0]), (F(8), q[1]), (F(64), q[2])],
        block_size=int(rng.integers(16, 256)),
        map_slots=int(rng.integers(1, 32)),
    )


class TestLookup:
    """Test piecewise-linear tables."""

    def test_interpolates(self):
        """Test a point between two knots."""
        assert lookup([(0, 0), (10, 100)], 2.5) == 25

    def test_clamps(self):
        """Test positions beyond the end knots."""
        knots = [(1, 5), (4, 8)]
        assert lookup(knots, 0) == 5
        assert lookup(knots, 100) == 8

    def test_single_knot(self):
        """Test a one-knot table is constant."""
        assert lookup([(0, 3)], 1e9) == 3


class TestPhaseCosts:
    """Test each phase against hand-computed values."""

    def test_map_task(self):
        """Test s_i=6400, m=100, alpha=0.5 costs 0.8."""
        assert map_task_cost(exact_profile(), F(6400), 100, F(1, 2)) == F(4, 5)

    def test_map_task_without_output(self):
        """Test alpha=0 reduces to the read cost."""
        profile = exact_profile()
        assert map_task_cost(profile, F(6400), 100, 0) == profile.c1 * 64

    def test_map_task_empty_input(self):
        """Test no input costs nothing."""
        assert map_task_cost(exact_profile(), 0, 1, F(1, 2)) == 0

    def test_map_phase(self):
        """Test 100 maps on 25 slots run in four waves."""
        profile = exact_profile()
        assert map_phase_cost(profile, F(4, 5), 100) == F(16, 5)
        assert map_phase_cost(profile, F(4, 5), 20) == F(4, 5)
        assert map_phase_cost(profile, F(4, 5), 100, map_slots=1) == 80

    def test_copy(self):
        """Test s_i=6400, alpha=0.5, n=8, m=100 copies in 0.16."""
        t_cp, j_cp = copy_costs(exact_profile(), F(6400), 100, 8, F(1, 2))

        assert t_cp == F(16, 100)
        assert j_cp == 4 * t_cp

    def test_reduce_without_skew(self):
        """Test sigma=0 gives S*_r = alpha * s_i / n."""
        s_r_star, j_r = reduce_phase_cost(exact_profile(), 6400, 8, F(1, 2), 0, 0)

        assert s_r_star == 400
        assert j_r == F(5, 1000) * 400

    def test_reduce_single_reducer(self):
        """Test n=1 receives all alpha * s_i bytes."""
        s_r_star, _ = reduce_phase_cost(exact_profile(), 6400, 1, F(1, 2), 0, 0)
        assert s_r_star == 3200

    def test_reduce_skew(self):
        """Test three standard deviations are added."""
        s_r_star, _ = reduce_phase_cost(exact_profile(), 6400, 8, F(1, 2), 0, 10)
        assert s_r_star == 430

    def test_waves(self):
        """Test ceil(m / m')."""
        assert waves(100, 25) == 4
        assert waves(101, 25) == 5
        assert waves(1, 25) == 1

    def test_derive_map_tasks(self):
        """Test m = ceil(s_i / block size), at least one."""
        profile = exact_profile()
        assert derive_map_tasks(profile, 6400) == 100
        assert derive_map_tasks(profile, 6401) == 101
        assert derive_map_tasks(profile, 0) == 1

    def test_derive_map_tasks_fractional_size(self):
        """Test a fractional byte size past a block boundary needs another task."""
        profile = exact_profile()
        assert derive_map_tasks(profile, F(12801, 2)) == 101
        assert derive_map_tasks(profile, 6400.5) == 101
        assert derive_map_tasks(profile, 0.5) == 1


class TestTotalTime:
    """Test the overlapped total."""

    def test_map_bound_example(self):
        """Test the map-dominated example totals 5.36."""
        estimate = mrj_total_time(exact_profile(), F(6400), 100, 8, F(1, 2), 0, 0)

        assert estimate.t_m == F(4, 5)
        assert estimate.j_m == F(16, 5)
        assert estimate.t_cp == F(16, 100)
        assert estimate.j_r == 2
        assert estimate.total == F(536, 100)

    def test_copy_bound_branch(self):
        """Test the copy-dominated branch uses t_m + j_cp."""
        profile = exact_profile(c2=F(10))
        estimate = mrj_total_time(profile, F(6400), 100, 8, F(1, 2), 0, 0)

        assert estimate.t_cp > estimate.t_m
        assert estimate.total == estimate.t_m + estimate.j_cp + estimate.j_r

    def test_continuous_at_branch_switch(self):
        """Test both branches agree whenever t_m equals t_cp."""
        rng = np.random.default_rng(5)
        for _ in range(1000):
            profile = random_profile(rng)
            s_i = F(int(rng.integers(1_000, 100_000)))
            m = int(rng.integers(1, 200))
            n = int(rng.integers(1, 32))
            alpha = F(int(rng.integers(1, 40)), 10)
            t_m = map_task_cost(profile, s_i, m, alpha)
            q = F(1, 10**9)
            profile = exact_profile(
                **{**dict(profile), "q_table": [(F(1), q)]},
            )
            if t_m <= q * n:
                continue
            c2 = (t_m - q * n) * n * m / (alpha * s_i)
            profile = exact_profile(**{**dict(profile), "c2": c2})

            estimate = mrj_total_time(profile, s_i, m, n, alpha, F(1, 3), 0)

            assert estimate.t_m == estimate.t_cp
            assert estimate.j_m + estimate.t_cp == estimate.t_m + estimate.j_cp

    def test_overlap_never_exceeds_sum(self):
        """Test the total is at most the sum of the three phases."""
        rng = np.random.default_rng(9)
        for _ in range(500):
            profile = random_profile(rng)
            s_i = F(int(rng.integers(1, 100_000)))
            estimate = mrj_total_time(
                profile,
                s_i,
                derive_map_tasks(profile, s_i),
                int(rng.integers(1, 64)),
                F(int(rng.integers(1, 40)), 10),
                F(int(rng.integers(0, 10)), 10),
                int(rng.integers(0, 50)),
            )
            assert estimate.total <= estimate.j_m + estimate.j_cp + estimate.j_r

    def test_monotone_in_skew(self):
        """Test larger sigma never lowers the estimate."""
        profile = exact_profile(
            p_table=[(F(0), F(1, 1000)), (F(1000), F(1, 100))]
        )
        totals = [
            mrj_total_time(profile, F(6400), 100, 8, F(1, 2), 0, sigma).total
            for sigma in range(0, 400, 25)
        ]
        assert totals == sorted(totals)

    def test_job_time_derives_map_tasks(self):
        """Test job_time uses the block size."""
        sel = JobSelectivity(
            alpha=0.5, beta=0.0, sigma=0.0, join_selectivity=0.1, output_rows=1, k_r=8
        )
        estimate = job_time(exact_profile(), 6400, 8, sel)

        assert estimate.m == 100
        assert estimate.total == pytest.approx(5.36)


class TestMergeCost:
    """Test the merge cost."""

    def test_linear_in_id_bytes(self):
        """Test cost = rate * 8 * (rows x width) of both inputs."""
        profile = exact_profile()
        assert merge_cost(profile, 10, 2, 5, 3) == F(1, 1000) * 8 * (20 + 15)

    def test_empty_inputs(self):
        """Test merging nothing costs nothing."""
        assert merge_cost(exact_profile(), 0, 2, 0, 3) == 0


class TestCalibrationProfile:
    """Test profile validation and persistence."""

    def test_default(self):
        """Test the synthetic default."""
        profile = CalibrationProfile.default(4)

        assert profile.map_slots == 4
        assert profile.source == "synthetic-default"
        assert not profile.low_confidence

    def test_decreasing_table_rejected(self):
        """Test lookup tables must be non-decreasing."""
        with pytest.raises(ValidationError):
            CalibrationProfile(
                c1=1e-9,
                c2=1e-9,
                p_table=[(0.0, 2e-9), (10.0, 1e-9)],
                q_table=[(1.0, 0.01)],
                block_size=1024,
                map_slots=1,
            )

    def test_save_and_load(self, tmp_path):
        """Test a profile survives a save/load cycle."""
        profile = CalibrationProfile.default(6)
        path = tmp_path / "calibration.json"

        profile.save(path)

        assert CalibrationProfile.load(path) == profile
