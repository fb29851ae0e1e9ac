"""Tests for join-path enumeration, pruning, cover selection and planning."""

import itertools
import math

import numpy as np
import pytest
from thetamr.exceptions import PlanningError
from thetamr.planner import (
    Planner,
    build_pruned_graph,
    check_dominated,
    enumerate_join_paths,
    plan_merges,
    plan_query,
    select_cover,
    verify_dominance_witness,
)
from thetamr.relational import build_join_graph
from thetamr.runtime import Runtime
from thetamr.scheduler import check_schedule
from thetamr.types import (
    CalibrationProfile,
    JobCandidate,
    PlannerOptions,
    PrunedJoinPathGraph,
    PruneRecord,
)

from tests.conftest import build_query, condition, integer_relation

FULL_SAMPLE = PlannerOptions(sample_rate=1.0, k_max=16)


def candidate(path, w, s=1, relations=None, residual=()):
    relations = relations or [f"R{i}" for i in range(len(path) + 1)]
    return JobCandidate(
        path=list(path),
        relations=relations,
        conds=sorted(path),
        residual_conds=list(residual),
        w=w,
        s=s,
        k_r=s,
    )


def edge_sets(trails):
    return {frozenset(t.edges) for t in trails}


def cheapest_cover(candidates, universe):
    """Exhaustive minimum-cost cover."""
    best = math.inf
    for size in range(1, len(candidates) + 1):
        for combo in itertools.combinations(candidates, size):
            if set(universe) <= set().union(*(c.covered for c in combo)):
                best = min(best, sum(c.w for c in combo))
    return best


def cycle_workload(seed, size=80):
    """Six relations on a cycle with mixed comparison operators."""
    rng = np.random.default_rng(seed)
    relations = [
        integer_relation(f"R{i}", a=rng.integers(0, 400, size)) for i in range(1, 7)
    ]
    ops = rng.choice(["<", "<=", ">", ">=", "<>"], 6)
    conditions = [
        condition(i, f"R{i}.a", str(ops[i - 1]), f"R{i % 6 + 1}.a", offset=10)
        for i in range(1, 7)
    ]
    return build_query(relations, conditions)


class TestEnumerateJoinPaths:
    """Test no-edge-repeating path enumeration."""

    def test_chain(self, chain_query):
        """Test a two-condition chain has three paths."""
        trails = enumerate_join_paths(build_join_graph(chain_query), 6)

        assert [t.edges for t in trails] == [(1,), (2,), (1, 2)]
        assert trails[-1].relations == ("R1", "R2", "R3")

    def test_cycle(self, cycle_query):
        """Test every arc of a six-cycle is enumerated once."""
        trails = enumerate_join_paths(build_join_graph(cycle_query), 5)

        assert len(trails) == 30
        assert frozenset({2, 3, 4, 5, 6}) in edge_sets(trails)
        assert all(len(t.relations) == len(t.edges) + 1 for t in trails)

    def test_closed_walk_excluded(self, cycle_query):
        """Test the full cycle returns to its start and is not a path."""
        trails = enumerate_join_paths(build_join_graph(cycle_query), 6)

        assert len(trails) == 30
        assert max(len(t.edges) for t in trails) == 5

    def test_hop_cap(self, cycle_query):
        """Test max_len bounds the path length."""
        trails = enumerate_join_paths(build_join_graph(cycle_query), 2)
        assert len(trails) == 12

    def test_parallel_edges(self):
        """Test two conditions between the same pair of relations."""
        query = build_query(
            [
                integer_relation("R1", a=[1, 2]),
                integer_relation("R2", a=[1, 2]),
                integer_relation("R3", a=[1, 2]),
            ],
            [
                condition(1, "R1.a", "<", "R2.a"),
                condition(2, "R1.a", ">", "R2.a", offset=-5),
                condition(3, "R2.a", "<=", "R3.a"),
            ],
        )

        trails = enumerate_join_paths(build_join_graph(query), 6)

        assert edge_sets(trails) == {
            frozenset({1}),
            frozenset({2}),
            frozenset({3}),
            frozenset({1, 3}),
            frozenset({2, 3}),
            frozenset({1, 2, 3}),
        }

    def test_invalid_max_len(self, chain_query):
        """Test a hop cap below one."""
        with pytest.raises(PlanningError):
            enumerate_join_paths(build_join_graph(chain_query), 0)


class TestCheckDominated:
    """Test the redundancy rule for multi-condition candidates."""

    def test_single_edge_always_kept(self):
        """Test a one-condition candidate is never pruned."""
        cheap = candidate([1], w=1.0)
        keep, witness = check_dominated(candidate([1], w=9.0), [cheap])

        assert keep
        assert witness == []

    def test_pruned_by_cheaper_pair(self):
        """Test two cheaper jobs with no more reducers replace a path."""
        first, second = candidate([1], w=4.0, s=4), candidate([2], w=5.0, s=4)
        target = candidate([1, 2], w=10.0, s=8)

        keep, witness = check_dominated(target, [second, first])

        assert not keep
        assert witness == [first, second]

    def test_kept_when_cheaper(self):
        """Test a path cheaper than every alternative survives."""
        others = [candidate([1], w=4.0, s=4), candidate([2], w=5.0, s=4)]

        keep, _ = check_dominated(candidate([1, 2], w=3.5, s=8), others)

        assert keep

    def test_kept_when_more_reducers_needed(self):
        """Test the witnesses may not use more reduce tasks in total."""
        others = [candidate([1], w=4.0, s=5), candidate([2], w=5.0, s=4)]

        keep, _ = check_dominated(candidate([1, 2], w=10.0, s=8), others)

        assert keep

    def test_residual_conditions_must_be_covered(self):
        """Test witnesses must cover off-path conditions too."""
        target = candidate([1, 2], w=10.0, s=8, residual=[3])
        others = [candidate([1], w=4.0, s=4), candidate([2], w=5.0, s=4)]

        keep, _ = check_dominated(target, others)

        assert keep

    def test_witness_limit(self):
        """Test at most three witnesses are combined."""
        target = candidate([1, 2, 3, 4], w=100.0, s=8)
        singles = [candidate([i], w=1.0, s=1) for i in range(1, 5)]

        keep, _ = check_dominated(target, singles)

        assert keep

    def test_verify_witness(self):
        """Test a produced record passes the independent check."""
        first, second = candidate([1], w=4.0, s=4), candidate([2], w=5.0, s=4)
        target = candidate([1, 2], w=10.0, s=8)
        _, witness = check_dominated(target, [first, second])
        record = PruneRecord(candidate=target, rule="dominated", witness=witness)

        assert verify_dominance_witness(record)

    def test_verify_rejects_bad_witness(self):
        """Test a witness costing as much as the candidate is rejected."""
        target = candidate([1, 2], w=10.0, s=8)
        record = PruneRecord(
            candidate=target,
            rule="dominated",
            witness=[candidate([1], w=10.0, s=4), candidate([2], w=5.0, s=4)],
        )

        assert not verify_dominance_witness(record)


class TestSelectCover:
    """Test greedy weighted set cover."""

    def test_greedy_order(self):
        """Test the lowest cost per new condition is taken first."""
        a = candidate([1, 2], w=6.0)
        b = candidate([3], w=2.0)
        c = candidate([1], w=2.0)
        d = candidate([2], w=2.5)
        graph = PrunedJoinPathGraph(candidates=[a, b, c, d], universe=[1, 2, 3])

        assert select_cover(graph) == [c, b, d]

    def test_within_greedy_bound(self):
        """Test greedy cost stays within ln 6 + 1 of the optimum on six conditions."""
        rng = np.random.default_rng(21)
        universe = list(range(1, 7))
        bound = math.log(6) + 1
        for _ in range(30):
            candidates = [
                candidate([i], w=float(rng.integers(1, 20))) for i in universe
            ]
            for _ in range(6):
                size = int(rng.integers(2, 7))
                subset = sorted(rng.choice(universe, size, replace=False).tolist())
                candidates.append(candidate(subset, w=float(rng.integers(1, 40))))
            graph = PrunedJoinPathGraph(candidates=candidates, universe=universe)

            greedy = sum(c.w for c in select_cover(graph))

            assert greedy <= bound * cheapest_cover(candidates, universe)

    def test_uncovered_condition(self):
        """Test a condition no candidate covers."""
        graph = PrunedJoinPathGraph(candidates=[candidate([1], w=1.0)], universe=[1, 2])

        with pytest.raises(PlanningError):
            select_cover(graph)


class TestPlanMerges:
    """Test merge tree construction."""

    def test_smallest_result_first(self):
        """Test the pair with the smaller estimated result merges first."""
        outputs = [
            ("J1", ["R1", "R2"], 10.0),
            ("J2", ["R2", "R3"], 20.0),
            ("J3", ["R3", "R4"], 5.0),
        ]
        cards = {f"R{i}": 10 for i in range(1, 5)}

        steps = plan_merges(
            outputs, cards, CalibrationProfile.default(4), ["R1", "R2", "R3", "R4"]
        )

        assert [(s.task_id, s.left, s.right, s.keys) for s in steps] == [
            ("M1", "J2", "J3", ["R3"]),
            ("M2", "J1", "M1", ["R2"]),
        ]
        assert steps[0].est_rows == 10.0
        assert steps[-1].relations == ["R1", "R2", "R3", "R4"]
        assert all(s.duration > 0 for s in steps)

    def test_single_output(self):
        """Test one job needs no merge."""
        steps = plan_merges(
            [("J1", ["R1", "R2"], 3.0)],
            {"R1": 2, "R2": 2},
            CalibrationProfile.default(4),
            ["R1", "R2"],
        )
        assert steps == []

    def test_disjoint_outputs(self):
        """Test outputs without a shared relation cannot merge."""
        with pytest.raises(PlanningError):
            plan_merges(
                [("J1", ["R1"], 1.0), ("J2", ["R2"], 1.0)],
                {"R1": 1, "R2": 1},
                CalibrationProfile.default(4),
                ["R1", "R2"],
            )


class TestBuildPrunedGraph:
    """Test candidate costing and pruning on a real query."""

    def test_unpruned_chain(self, chain_query, profile):
        """Test every path becomes a candidate without pruning."""
        estimator = Planner(chain_query, 4, profile, FULL_SAMPLE).estimator

        graph = build_pruned_graph(
            estimator.graph, estimator.stats, profile, 6, FULL_SAMPLE, estimator, False
        )

        assert len(graph.candidates) == 3
        assert graph.universe == [1, 2]
        assert graph.pruned == []
        assert [c.sort_key() for c in graph.candidates] == sorted(
            c.sort_key() for c in graph.candidates
        )
        assert all(c.w > 0 and c.cost is not None for c in graph.candidates)

    def test_single_edge_only(self, chain_query, profile):
        """Test the pairwise graph keeps single conditions."""
        estimator = Planner(chain_query, 4, profile, FULL_SAMPLE).estimator

        graph = build_pruned_graph(
            estimator.graph,
            estimator.stats,
            profile,
            6,
            FULL_SAMPLE,
            estimator,
            single_edge_only=True,
        )

        assert sorted(c.hops for c in graph.candidates) == [1, 1]

    def test_prune_records_verify(self, chain_query, profile):
        """Test every dominance record carries a valid witness."""
        estimator = Planner(chain_query, 4, profile, FULL_SAMPLE).estimator

        graph = build_pruned_graph(
            estimator.graph, estimator.stats, profile, 6, FULL_SAMPLE, estimator
        )

        kept = {frozenset(c.path) for c in graph.candidates}
        assert {frozenset({1}), frozenset({2})} <= kept
        for record in graph.pruned:
            if record.rule == "dominated":
                assert verify_dominance_witness(record)


class TestJobCost:
    """Test candidate costs against the reduce-count sweep."""

    def assert_cheapest(self, query, profile):
        options = FULL_SAMPLE.model_copy(update={"max_len": 3})
        estimator = Planner(query, 8, profile, options).estimator

        graph = build_pruned_graph(
            estimator.graph, estimator.stats, profile, 3, options, estimator, False
        )

        for c in graph.candidates:
            upper = min(options.k_max, estimator.config_for(c.relations).total_cells)
            costs = [
                estimator.estimate(c.relations, n).total for n in range(1, upper + 1)
            ]
            assert c.w == min(costs)
            assert c.s == costs.index(min(costs)) + 1
            assert c.k_r == estimator.k_r_for(c.relations)
            assert c.cost.total == c.w

    def test_chain(self, chain_query, profile):
        """Test w is the cheapest reduce count on a chain."""
        self.assert_cheapest(chain_query, profile)

    def test_cycle(self, cycle_query, profile):
        """Test w is the cheapest reduce count on a six-cycle."""
        self.assert_cheapest(cycle_query, profile)


class TestPlanner:
    """Test end-to-end planning."""

    def test_two_relations_one_job(self, two_way_query, profile):
        """Test a single condition becomes a single job."""
        plan = plan_query(two_way_query, 4, profile, FULL_SAMPLE)

        assert len(plan.jobs) == 1
        assert plan.merges == []
        assert plan.output_task == "J1"
        assert plan.covered() == frozenset({1})

    def test_chain_covers_all_conditions(self, chain_query, profile):
        """Test the plan covers the query and respects the worker budget."""
        result = Planner(chain_query, 4, profile, FULL_SAMPLE).plan()
        plan = result.plan

        assert plan.covered() == frozenset({1, 2})
        assert set(result.alternatives) == {"theta", "pairwise"}
        assert plan.makespan == min(result.alternatives.values())
        assert len(plan.merges) == len(plan.jobs) - 1
        intervals = [
            (j.task_id, j.start, j.finish, j.allotment) for j in plan.jobs
        ] + [(m.task_id, m.start, m.finish, m.allotment) for m in plan.merges]
        precedence = [(m.left, m.task_id) for m in plan.merges] + [
            (m.right, m.task_id) for m in plan.merges
        ]
        assert check_schedule(intervals, precedence, 4) is None
        assert all(j.allotment <= 4 for j in plan.jobs)

    def test_pairwise_baseline(self, chain_query, profile):
        """Test the pairwise baseline uses one job per condition."""
        options = FULL_SAMPLE.model_copy(update={"baseline": "pairwise"})

        plan = plan_query(chain_query, 4, profile, options)

        assert plan.strategy == "pairwise"
        assert [j.candidate.hops for j in plan.jobs] == [1, 1]
        assert len(plan.merges) == 1

    def test_deterministic(self, chain_query, profile):
        """Test the same seed gives the same plan."""
        first = plan_query(chain_query, 4, profile, FULL_SAMPLE)
        second = plan_query(chain_query, 4, profile, FULL_SAMPLE)

        assert first == second

    def test_invalid_worker_budget(self, chain_query, profile):
        """Test k_p below one."""
        with pytest.raises(PlanningError):
            Planner(chain_query, 0, profile, FULL_SAMPLE)

    def test_invalid_max_len(self, chain_query, profile):
        """Test a hop cap below one."""
        options = FULL_SAMPLE.model_copy(update={"max_len": 0})

        with pytest.raises(PlanningError):
            Planner(chain_query, 4, profile, options)

    def test_duration_prices_executed_job(self, chain_query, profile):
        """Test each job's duration is the cost of the partition the runtime runs."""
        planning = Planner(chain_query, 4, profile, FULL_SAMPLE).plan()
        estimator = planning.estimator
        runtime = Runtime(
            chain_query.catalog, chain_query.conditions, profile, options=FULL_SAMPLE
        )

        for job in planning.plan.jobs:
            a = job.allotment
            executed = runtime.partition_for(job.candidate, job.k_r)
            expected = estimator.estimate(
                job.candidate.relations, a, map_slots=min(profile.map_slots, a)
            )
            assert executed.k_r == a
            assert job.duration == job.tau[a] == float(expected.total)

    def test_chosen_plan_beats_pairwise(self, profile):
        """Test the chosen plan is no slower than the pairwise plan on six-cycles."""
        options = PlannerOptions(k_max=16, max_len=3, max_cells=4096)
        pairwise_options = options.model_copy(update={"baseline": "pairwise"})
        wins = 0
        for seed in range(20):
            query = cycle_workload(seed)
            chosen = plan_query(
                query, 8, profile, options.model_copy(update={"seed": seed})
            )
            pairwise = plan_query(
                query, 8, profile, pairwise_options.model_copy(update={"seed": seed})
            )
            wins += chosen.makespan <= pairwise.makespan

        assert wins >= 16
