"""
thetamr - planning and execution of multi-way theta-join queries.

Queries are split into jobs along paths of the join graph, each job runs as
one map/shuffle/reduce round over a Hilbert-partitioned cube, and job outputs
are merged on global tuple ids.

Example usage:
    from thetamr import engine

    e = engine(k_p=8)
    query = e.load_query("itinerary.q")

    # Inspect the plan
    print(e.explain(query))

    # Execute it
    result = e.run(query)
    print(len(result.rows), result.report.total_wall_time)
"""

from thetamr.core import RunResult, ThetaJoinEngine, engine
from thetamr.exceptions import (
    ConfigurationError,
    ConnectivityError,
    OracleGuardError,
    PlanConsistencyError,
    PlanningError,
    QueryError,
    ThetaMRError,
)
from thetamr.planner import plan_query
from thetamr.relational import Query, Relation, load_relation, parse_query
from thetamr.runtime import JobOutput, brute_force_join, run_merge, run_mrj
from thetamr.types import CalibrationProfile, ExecutionPlan, PlannerOptions, RunReport

__version__ = "1.0.0"
__all__ = [
    "engine",
    "ThetaJoinEngine",
    "RunResult",
    "ThetaMRError",
    "QueryError",
    "ConnectivityError",
    "PlanningError",
    "PlanConsistencyError",
    "OracleGuardError",
    "ConfigurationError",
    "Query",
    "Relation",
    "load_relation",
    "parse_query",
    "plan_query",
    "JobOutput",
    "brute_force_join",
    "run_merge",
    "run_mrj",
    "CalibrationProfile",
    "ExecutionPlan",
    "PlannerOptions",
    "RunReport",
]
