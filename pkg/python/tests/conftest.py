"""Test configuration and fixtures."""

import numpy as np
import pytest
from thetamr.relational import Query, Relation
from thetamr.types import (
    Attribute,
    AttributeRef,
    CalibrationProfile,
    Operand,
    Schema,
    ThetaCondition,
)


def integer_relation(name, **columns):
    """Relation with one integer attribute per keyword argument."""
    schema = Schema(attributes=[Attribute(name=a, type="integer") for a in columns])
    return Relation(
        name, schema, {a: np.asarray(v, dtype=np.int64) for a, v in columns.items()}
    )


def condition(cid, left, op, right, offset=0):
    """ThetaCondition from `R.a` strings."""
    lrel, lattr = left.split(".")
    rrel, rattr = right.split(".")
    return ThetaCondition(
        id=cid,
        left=Operand(ref=AttributeRef(relation=lrel, attribute=lattr), offset=offset),
        op=op,
        right=Operand(ref=AttributeRef(relation=rrel, attribute=rattr)),
    )


def build_query(relations, conditions, projection=None):
    if projection is None:
        projection = [
            AttributeRef(relation=r.name, attribute=r.schema.names[0])
            for r in relations
        ]
    return Query(relations=relations, conditions=conditions, projection=projection)


@pytest.fixture
def make_relation():
    """Factory for integer relations."""
    return integer_relation


@pytest.fixture
def profile():
    """Synthetic calibration profile for eight workers."""
    return CalibrationProfile.default(8)


@pytest.fixture
def two_way_query():
    """R1.a < R2.b over {1, 2} x {1, 2}."""
    return build_query(
        [integer_relation("R1", a=[1, 2]), integer_relation("R2", b=[1, 2])],
        [condition(1, "R1.a", "<", "R2.b")],
    )


@pytest.fixture
def chain_query():
    """Three relations joined by an inequality chain."""
    rng = np.random.default_rng(3)
    relations = [
        integer_relation("R1", a=rng.integers(0, 20, 12)),
        integer_relation("R2", a=rng.integers(0, 20, 14), b=rng.integers(0, 20, 14)),
        integer_relation("R3", b=rng.integers(0, 20, 10)),
    ]
    return build_query(
        relations,
        [condition(1, "R1.a", "<", "R2.a"), condition(2, "R2.b", ">=", "R3.b")],
    )


@pytest.fixture
def cycle_query():
    """Six relations on a cycle, condition i joining R_i and R_{i+1}."""
    rng = np.random.default_rng(11)
    relations = [
        integer_relation(f"R{i}", a=rng.integers(0, 30, 8)) for i in range(1, 7)
    ]
    conditions = [
        condition(i, f"R{i}.a", "<=", f"R{i % 6 + 1}.a", offset=5) for i in range(1, 7)
    ]
    return build_query(relations, conditions)


@pytest.fixture
def itinerary_dir(tmp_path):
    """Three flight legs on disk plus a connecting-itinerary query."""
    legs = {
        "F1": [(101, 0, 90), (102, 60, 150), (103, 200, 280), (104, 30, 100)],
        "F2": [(201, 130, 220), (202, 160, 250), (203, 300, 360), (204, 90, 170)],
        "F3": [(301, 250, 330), (302, 400, 480), (303, 200, 260), (304, 280, 350)],
    }
    for name, rows in legs.items():
        lines = ["fno:integer,dep:integer,arr:integer"]
        lines += [",".join(str(v) for v in row) for row in rows]
        (tmp_path / f"{name.lower()}.csv").write_text("\n".join(lines) + "\n")
    (tmp_path / "itinerary.q").write_text(
        "# connecting flights with a 30 minute stop-over\n"
        'RELATION F1 FROM "f1.csv";\n'
        'RELATION F2 FROM "f2.csv";\n'
        'RELATION F3 FROM "f3.csv";\n'
        "JOIN F1.arr + 30 < F2.dep;\n"
        "JOIN F2.arr + 30 < F3.dep;\n"
        "SELECT F1.fno, F2.fno, F3.fno;\n"
    )
    return tmp_path
