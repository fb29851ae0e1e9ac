"""Randomised plan-versus-oracle equivalence suite."""

import itertools
import logging
import math
import time
from typing import Iterator, List, Optional

import numpy as np
from pydantic import BaseModel, Field

from thetamr.exceptions import PlanConsistencyError
from thetamr.planner import Planner
from thetamr.relational import Query, Relation
from thetamr.runtime import Runtime, brute_force_join
from thetamr.seeding import rng_for
from thetamr.types import (
    OPERATORS,
    Attribute,
    AttributeRef,
    CalibrationProfile,
    Operand,
    PlannerOptions,
    Schema,
    ThetaCondition,
)

logger = logging.getLogger(__name__)

CROSS_PRODUCT_BUDGET = 1_000_000
VALUE_RANGE = 24
ATTRIBUTES = ("a", "b", "c")


class OracleCase(BaseModel):
    """Outcome of one generated query."""

    index: int = Field(description="Position in the suite")
    relations: int = Field(description="Number of relations")
    operators: List[str] = Field(description="Operators of the query's conditions")
    strategy: str = Field(default="", description="Cover of the executed plan")
    jobs: int = Field(default=0, description="Jobs in the executed plan")
    plan_rows: int = Field(default=0)
    oracle_rows: int = Field(default=0)
    duplicates: int = Field(default=0, description="Duplicate id vectors produced")
    passed: bool = Field(default=False)
    error: Optional[str] = Field(default=None)


class OracleSuiteResult(BaseModel):
    """Aggregate of an oracle-check run."""

    total: int = Field(description="Queries generated")
    passed: int = Field(description="Queries whose plan output matched the oracle")
    duplicates: int = Field(default=0, description="Duplicate id vectors over the suite")
    operators: List[str] = Field(default_factory=list, description="Operators exercised")
    elapsed: float = Field(default=0.0, description="Seconds for the whole suite")
    cases: List[OracleCase] = Field(default_factory=list)

    @property
    def pass_rate(self) -> float:
        return 1.0 if self.total == 0 else self.passed / self.total

    @property
    def ok(self) -> bool:
        return self.passed == self.total


def relation_size(relations: int, max_tuples: int) -> int:
    """Tuples per relation keeping the cross product within the oracle budget."""
    per_relation = int(math.floor(CROSS_PRODUCT_BUDGET ** (1.0 / relations)))
    return max(2, min(max_tuples, per_relation))


def random_relation(rng: np.random.Generator, name: str, size: int) -> Relation:
    width = int(rng.integers(2, len(ATTRIBUTES) + 1))
    schema = Schema(
        attributes=[Attribute(name=a, type="integer") for a in ATTRIBUTES[:width]]
    )
    columns = {
        a: rng.integers(0, VALUE_RANGE, size=size, dtype=np.int64) for a in schema.names
    }
    return Relation(name, schema, columns)


def random_query(
    rng: np.random.Generator,
    max_tuples: int = 200,
    operators: Optional[Iterator[str]] = None,
    min_relations: int = 3,
    max_relations: int = 6,
) -> Query:
    """
    A connected random query: a spanning tree plus up to two extra conditions.

    Operators are drawn from `operators` in turn (cycling all six when omitted),
    so a suite of six or more queries exercises every operator.
    """
    operators = operators or itertools.cycle(OPERATORS)
    m = int(rng.integers(min_relations, max_relations + 1))
    size = relation_size(m, max_tuples)
    relations = [random_relation(rng, f"R{i}", size) for i in range(1, m + 1)]

    pairs = [(int(rng.integers(0, i)), i) for i in range(1, m)]
    for _ in range(int(rng.integers(0, 3))):
        left, right = sorted(int(x) for x in rng.choice(m, size=2, replace=False))
        pairs.append((left, right))

    conditions = []
    for number, (left, right) in enumerate(pairs, start=1):
        if rng.random() < 0.5:
            left, right = right, left
        sides = []
        for index in (left, right):
            relation = relations[index]
            names = relation.schema.names
            attribute = names[int(rng.integers(0, len(names)))]
            sides.append(AttributeRef(relation=relation.name, attribute=attribute))
        offset = int(rng.integers(-3, 4)) if rng.random() < 0.3 else 0
        conditions.append(
            ThetaCondition(
                id=number,
                left=Operand(ref=sides[0], offset=offset),
                op=next(operators),
                right=Operand(ref=sides[1]),
            )
        )
    projection = [
        AttributeRef(relation=r.name, attribute=r.schema.names[0]) for r in relations
    ]
    return Query(relations=relations, conditions=conditions, projection=projection)


def flip_first_condition(query: Query) -> Query:
    conditions = [query.conditions[0].negated()] + list(query.conditions[1:])
    return query.model_copy(update={"conditions": conditions})


def check_query(
    query: Query,
    k_p: int,
    profile: CalibrationProfile,
    options: PlannerOptions,
    index: int = 0,
    flip_condition: bool = False,
) -> OracleCase:
    """Plan and run `query` (flipped when asked) and compare with the oracle."""
    case = OracleCase(
        index=index,
        relations=len(query.relations),
        operators=[c.op for c in query.conditions],
    )
    executed = flip_first_condition(query) if flip_condition else query
    try:
        result = Planner(executed, k_p, profile, options).plan()
        runtime = Runtime(
            executed.catalog, executed.conditions, profile, options.seed, options
        )
        output, _ = runtime.run_plan(result.plan)
    except PlanConsistencyError as e:
        case.error = str(e)
        case.duplicates = 1
        return case

    oracle = brute_force_join(query, options.seed)
    case.strategy = result.plan.strategy
    case.jobs = len(result.plan.jobs)
    case.plan_rows = len(output)
    case.oracle_rows = len(oracle)
    case.duplicates = output.duplicate_count()
    case.passed = case.duplicates == 0 and output.equals(oracle)
    return case


def oracle_check(
    count: int = 50,
    max_tuples: int = 200,
    seed: int = 7,
    k_p: int = 8,
    flip_condition: bool = False,
    profile: Optional[CalibrationProfile] = None,
    max_len: int = 3,
    sample_rate: float = 0.5,
) -> OracleSuiteResult:
    """
    Generate `count` random queries and check each plan against brute force.

    Args:
        count: Number of queries
        max_tuples: Upper bound on tuples per relation
        seed: Seed of query generation, sampling and global ids
        k_p: Worker budget each plan is scheduled and run with
        flip_condition: Negate one condition on the executed side (harness check)
        profile: Calibration profile (synthetic default when omitted)
        max_len: Hop cap for join paths
        sample_rate: Sampling fraction for statistics
    """
    started = time.perf_counter()
    if count <= 0:
        logger.warning("oracle-check with count=%d passes vacuously", count)
        return OracleSuiteResult(total=0, passed=0)

    profile = profile or CalibrationProfile.default(k_p)
    options = PlannerOptions(seed=seed, max_len=max_len, sample_rate=sample_rate)
    operators = itertools.cycle(OPERATORS)
    cases = []
    for index in range(count):
        query = random_query(rng_for(seed, "oracle", index), max_tuples, operators)
        case = check_query(query, k_p, profile, options, index, flip_condition)
        level = logging.DEBUG if case.passed else logging.WARNING
        logger.log(
            level,
            "Query %d (%d relations, %s): plan %d rows, oracle %d rows, %s",
            index,
            case.relations,
            " ".join(case.operators),
            case.plan_rows,
            case.oracle_rows,
            "MATCH" if case.passed else "MISMATCH",
        )
        cases.append(case)

    return OracleSuiteResult(
        total=len(cases),
        passed=sum(1 for c in cases if c.passed),
        duplicates=sum(c.duplicates for c in cases),
        operators=sorted(
            {op for c in cases for op in c.operators}, key=OPERATORS.index
        ),
        elapsed=time.perf_counter() - started,
        cases=cases,
    )
