"""Type definitions for thetamr."""

import json
from pathlib import Path
from typing import Dict, FrozenSet, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, Field, field_validator, model_validator

from thetamr.exceptions import ConfigurationError

AttributeType = Literal["integer", "decimal", "string", "date-time"]
Operator = Literal["<", "<=", "=", ">=", ">", "<>"]
Scalar = Union[int, float, str]

OPERATORS: Tuple[str, ...] = ("<", "<=", "=", ">=", ">", "<>")
MIB = 1 << 20
ID_BYTES = 8


class Attribute(BaseModel):
    """A named, typed column of a relation."""

    name: str = Field(description="Attribute identifier")
    type: AttributeType = Field(description="Scalar type of the attribute")


class Schema(BaseModel):
    """Ordered attribute list of a relation."""

    attributes: List[Attribute] = Field(
        min_length=1, description="Attributes in file order"
    )

    @field_validator("attributes")
    @classmethod
    def _unique_names(cls, attributes: List[Attribute]) -> List[Attribute]:
        names = [a.name for a in attributes]
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise ValueError(f"duplicate attribute names: {', '.join(duplicates)}")
        return attributes

    @property
    def names(self) -> List[str]:
        return [a.name for a in self.attributes]

    def type_of(self, name: str) -> AttributeType:
        for attribute in self.attributes:
            if attribute.name == name:
                return attribute.type
        raise KeyError(name)

    def header(self) -> str:
        """Render the schema as a relation-file header line."""
        return ",".join(f"{a.name}:{a.type}" for a in self.attributes)


class AttributeRef(BaseModel):
    """A (relation, attribute) reference."""

    relation: str = Field(description="Relation name")
    attribute: str = Field(description="Attribute name within the relation")

    def __str__(self) -> str:
        return f"{self.relation}.{self.attribute}"


class Operand(BaseModel):
    """One side of a theta condition: an attribute plus a constant offset."""

    ref: AttributeRef = Field(description="Referenced attribute")
    offset: int = Field(default=0, description="Constant added to the attribute")

    def render(self) -> str:
        if self.offset > 0:
            return f"{self.ref} + {self.offset}"
        if self.offset < 0:
            return f"{self.ref} - {-self.offset}"
        return str(self.ref)


_NEGATED: Dict[str, str] = {
    "<": ">=",
    "<=": ">",
    "=": "<>",
    ">=": "<",
    ">": "<=",
    "<>": "=",
}


class ThetaCondition(BaseModel):
    """A join predicate `left op right` between two distinct relations."""

    id: int = Field(ge=1, description="Condition label, numbered in source order")
    left: Operand = Field(description="Left operand")
    op: Operator = Field(description="Comparison operator")
    right: Operand = Field(description="Right operand")

    @model_validator(mode="after")
    def _distinct_relations(self) -> "ThetaCondition":
        if self.left.ref.relation == self.right.ref.relation:
            raise ValueError(
                f"condition {self.id} compares relation "
                f"'{self.left.ref.relation}' with itself"
            )
        return self

    @property
    def relations(self) -> Tuple[str, str]:
        return (self.left.ref.relation, self.right.ref.relation)

    def render(self) -> str:
        return f"{self.left.render()} {self.op} {self.right.render()}"

    def negated(self) -> "ThetaCondition":
        """Return the logical complement of this condition."""
        return self.model_copy(update={"op": _NEGATED[self.op]})


class AttributeStats(BaseModel):
    """Per-attribute summary collected from a sample."""

    name: str = Field(description="Attribute name")
    min: Scalar = Field(description="Smallest sampled value")
    max: Scalar = Field(description="Largest sampled value")
    distinct: int = Field(ge=0, description="Estimated number of distinct values")
    avg_width: float = Field(ge=0, description="Mean encoded width in bytes")

    @model_validator(mode="after")
    def _ordered(self) -> "AttributeStats":
        if self.min > self.max:  # type: ignore[operator]
            raise ValueError(f"min > max for attribute '{self.name}'")
        return self


class RelationStats(BaseModel):
    """Sampling-based statistics of one relation."""

    relation: str = Field(description="Relation name")
    cardinality: int = Field(ge=0, description="Exact tuple count")
    bytes_total: int = Field(ge=0, description="Exact size of the data lines in bytes")
    attributes: List[AttributeStats] = Field(description="Per-attribute estimates")
    sample_rate: float = Field(gt=0, le=1, description="Sampling fraction used")
    seed: int = Field(description="Seed of the sample")
    sample_positions: List[int] = Field(
        default_factory=list, description="Row positions of the sampled tuples"
    )

    @model_validator(mode="after")
    def _distinct_bounded(self) -> "RelationStats":
        for attribute in self.attributes:
            if attribute.distinct > self.cardinality:
                raise ValueError(
                    f"distinct estimate of '{attribute.name}' exceeds cardinality"
                )
        return self

    def attribute(self, name: str) -> AttributeStats:
        for attribute in self.attributes:
            if attribute.name == name:
                return attribute
        raise KeyError(name)

    @property
    def row_width(self) -> float:
        return sum(a.avg_width for a in self.attributes)


class JobSelectivity(BaseModel):
    """Selectivity quantities consumed by the single-job cost model."""

    alpha: float = Field(gt=0, description="Map output bytes / map input bytes")
    beta: float = Field(ge=0, description="Reduce output bytes / reduce input bytes")
    sigma: float = Field(ge=0, description="Std. deviation of reduce input bytes")
    join_selectivity: float = Field(
        ge=0, le=1, description="Fraction of the cross product satisfying all conditions"
    )
    output_rows: float = Field(ge=0, description="Estimated number of result rows")
    k_r: int = Field(ge=1, description="Component count the estimate was made for")


Knots = List[Tuple[float, float]]


class CalibrationProfile(BaseModel):
    """System constants of the single-job cost model."""

    c1: float = Field(gt=0, description="Seconds per byte of sequential I/O")
    c2: float = Field(gt=0, description="Seconds per byte of network copy")
    p_table: Knots = Field(
        min_length=1, description="Spilled bytes per map -> seconds per byte"
    )
    q_table: Knots = Field(
        min_length=1, description="Reducer count -> seconds per connection"
    )
    block_size: int = Field(gt=0, description="Bytes of input per map task")
    map_slots: int = Field(ge=1, description="Concurrently runnable map tasks")
    merge_cost_per_byte: float = Field(
        default=0.002 / MIB, ge=0, description="Seconds per id byte in a merge"
    )
    reducer_memory_cap: int = Field(
        default=256 * MIB, gt=0, description="Reducer input bytes held in memory"
    )
    source: str = Field(default="synthetic-default", description="Provenance label")
    low_confidence: bool = Field(
        default=False, description="Whether the tables come from a quick calibration"
    )

    @field_validator("p_table", "q_table")
    @classmethod
    def _monotone(cls, knots: Knots) -> Knots:
        for (x0, y0), (x1, y1) in zip(knots, knots[1:]):
            if x1 <= x0:
                raise ValueError("knot positions must be strictly increasing")
            if y1 < y0:
                raise ValueError("lookup tables must be non-decreasing")
        return knots

    @classmethod
    def default(cls, workers: int = 16) -> "CalibrationProfile":
        """Synthetic profile used when no calibration file is given."""
        return cls(
            c1=0.01 / MIB,
            c2=0.02 / MIB,
            p_table=[(0.0, 0.005 / MIB)],
            q_table=[(1.0, 0.01)],
            block_size=64 * MIB,
            map_slots=max(1, workers),
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "CalibrationProfile":
        try:
            return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigurationError(f"Cannot read calibration profile {path}: {e}")
        except ValueError as e:
            raise ConfigurationError(f"Invalid calibration profile {path}: {e}")

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.model_dump_json(indent=2), encoding="utf-8")


class MrjCostEstimate(BaseModel):
    """Phase-by-phase execution time estimate of one map/reduce job."""

    s_i: float = Field(ge=0, description="Total input bytes")
    m: int = Field(ge=1, description="Map task count")
    n: int = Field(ge=1, description="Reduce task count")
    t_m: float = Field(ge=0, description="Seconds for one map task")
    j_m: float = Field(ge=0, description="Seconds for the map phase")
    t_cp: float = Field(ge=0, description="Seconds for one map's copy")
    j_cp: float = Field(ge=0, description="Seconds for the copy phase")
    s_r_star: float = Field(ge=0, description="Bytes of the largest reduce input")
    j_r: float = Field(ge=0, description="Seconds for the reduce phase")
    total: float = Field(ge=0, description="Seconds for the whole job")


class CubeConfig(BaseModel):
    """Shape of the cross-product hypercube of one job."""

    cardinalities: List[int] = Field(
        min_length=2, description="Tuple count per dimension"
    )
    eta: int = Field(ge=1, description="Recursion depth; 2**eta cells per axis")

    @field_validator("cardinalities")
    @classmethod
    def _positive(cls, cardinalities: List[int]) -> List[int]:
        if any(c < 1 for c in cardinalities):
            raise ValueError("every dimension needs at least one tuple")
        return cardinalities

    @model_validator(mode="after")
    def _fits(self) -> "CubeConfig":
        if self.eta * self.dims > 62:
            raise ValueError("eta * dims must not exceed 62")
        return self

    @property
    def dims(self) -> int:
        return len(self.cardinalities)

    @property
    def side(self) -> int:
        return 1 << self.eta

    @property
    def total_cells(self) -> int:
        return 1 << (self.eta * self.dims)

    def key(self) -> Tuple[Tuple[int, ...], int]:
        return (tuple(self.cardinalities), self.eta)


class ScoreReport(BaseModel):
    """Partition score (total shuffle duplication) of a partition."""

    cnt: List[List[int]] = Field(
        description="Per dimension, Cnt(t) for global ids 1..|R_i|"
    )
    score: int = Field(ge=0, description="Sum of all Cnt entries")
    per_dim_sums: List[int] = Field(description="Sum of Cnt over each dimension")


class DuplicationEstimate(BaseModel):
    """Expected copies per tuple of one dimension."""

    value: float = Field(ge=0, description="Copies per tuple")
    exact: bool = Field(
        description="True for the closed form on recursion-aligned cuts, "
        "False when the measured mean had to be used"
    )


class JobCandidate(BaseModel):
    """A join-path edge: one multi-relation job over a no-edge-repeating path."""

    path: List[int] = Field(min_length=1, description="Condition ids in path order")
    relations: List[str] = Field(description="Distinct relations in path order")
    conds: List[int] = Field(description="Sorted condition ids on the path")
    residual_conds: List[int] = Field(
        default_factory=list,
        description="Sorted ids of conditions among the relations but off the path",
    )
    w: float = Field(default=0.0, ge=0, description="Minimal single-job cost, seconds")
    s: int = Field(default=1, ge=1, description="Reduce count achieving w")
    k_r: int = Field(default=1, ge=1, description="Reduce count chosen by the optimiser")
    selectivity: Optional[JobSelectivity] = Field(
        default=None, description="Estimates the cost was computed from"
    )
    cost: Optional[MrjCostEstimate] = Field(
        default=None, description="Cost breakdown at s reducers"
    )

    @field_validator("path")
    @classmethod
    def _no_repeat(cls, path: List[int]) -> List[int]:
        if len(set(path)) != len(path):
            raise ValueError("a condition appears more than once on the path")
        return path

    @property
    def covered(self) -> FrozenSet[int]:
        return frozenset(self.conds) | frozenset(self.residual_conds)

    @property
    def hops(self) -> int:
        return len(self.path)

    @property
    def label(self) -> str:
        return "{" + ",".join(str(c) for c in self.path) + "}"

    def sort_key(self) -> Tuple[float, int, Tuple[int, ...]]:
        return (self.w, len(self.relations), tuple(self.path))


class PruneRecord(BaseModel):
    """Why a candidate was removed from the join-path graph."""

    candidate: JobCandidate = Field(description="The pruned candidate")
    rule: Literal["dominated", "extends-dominated"] = Field(
        description="Pruning rule that applied"
    )
    witness: List[JobCandidate] = Field(
        description="Cheaper covering collection, or the dominated candidate it extends"
    )


class PrunedJoinPathGraph(BaseModel):
    """Surviving job candidates, sorted by ascending cost."""

    candidates: List[JobCandidate] = Field(description="Worklist in ascending w")
    universe: List[int] = Field(description="All condition ids of the join graph")
    pruned: List[PruneRecord] = Field(
        default_factory=list, description="Pruning decisions with witnesses"
    )


class PlannedJob(BaseModel):
    """A job placed on the schedule."""

    task_id: str = Field(description="Task identifier, J1..Jn")
    candidate: JobCandidate = Field(description="The job's candidate")
    tau: Dict[int, float] = Field(description="Processing time per worker allotment")
    allotment: int = Field(ge=1, description="Workers (and reduce tasks) assigned")
    start: float = Field(ge=0, description="Start time in seconds")
    duration: float = Field(ge=0, description="tau at the allotment")

    @property
    def k_r(self) -> int:
        """Reduce tasks the runtime runs; the same as the allotment."""
        return self.allotment

    @property
    def finish(self) -> float:
        return self.start + self.duration


class MergeStep(BaseModel):
    """An id-keyed join of two task outputs on their shared relations."""

    task_id: str = Field(description="Task identifier, M1..Mn")
    left: str = Field(description="Task id of the left input")
    right: str = Field(description="Task id of the right input")
    keys: List[str] = Field(min_length=1, description="Shared relations joined on")
    relations: List[str] = Field(description="Relations tagged in the output")
    est_rows: float = Field(ge=0, description="Estimated output rows")
    start: float = Field(default=0.0, ge=0, description="Start time in seconds")
    duration: float = Field(default=0.0, ge=0, description="Estimated seconds")
    allotment: int = Field(default=1, ge=1, description="Workers used")

    @property
    def finish(self) -> float:
        return self.start + self.duration


class ExecutionPlan(BaseModel):
    """Chosen job set, merge tree and schedule for a query."""

    jobs: List[PlannedJob] = Field(description="Scheduled jobs")
    merges: List[MergeStep] = Field(
        default_factory=list, description="Merge tree in execution order"
    )
    makespan: float = Field(ge=0, description="Finish time of the last task")
    k_p: int = Field(ge=1, description="Worker budget")
    universe: List[int] = Field(description="All condition ids of the query")
    strategy: str = Field(default="theta", description="Cover the plan was built from")
    seed: int = Field(default=0, description="Seed used for ids and sampling")

    @property
    def output_task(self) -> str:
        return self.merges[-1].task_id if self.merges else self.jobs[0].task_id

    def covered(self) -> FrozenSet[int]:
        covered: FrozenSet[int] = frozenset()
        for job in self.jobs:
            covered |= job.candidate.covered
        return covered


class RunReport(BaseModel):
    """Measurements of one executed job or plan."""

    map_task_times: Dict[str, float] = Field(default_factory=dict)
    reduce_task_times: Dict[str, float] = Field(default_factory=dict)
    reducer_input_bytes: Dict[str, int] = Field(default_factory=dict)
    emitted_per_relation: Dict[str, int] = Field(
        default_factory=dict, description="MapEmission count per job/relation"
    )
    combinations_checked: int = Field(default=0)
    combinations_emitted: int = Field(default=0)
    shuffle_bytes: int = Field(default=0)
    spilled_reducers: int = Field(default=0)
    max_concurrent_workers: int = Field(default=0)
    job_wall_times: Dict[str, float] = Field(default_factory=dict)
    merge_wall_times: Dict[str, float] = Field(default_factory=dict)
    total_wall_time: float = Field(default=0.0)

    def absorb(self, other: "RunReport") -> None:
        """Fold another report's task-level measurements into this one."""
        self.map_task_times.update(other.map_task_times)
        self.reduce_task_times.update(other.reduce_task_times)
        self.reducer_input_bytes.update(other.reducer_input_bytes)
        self.emitted_per_relation.update(other.emitted_per_relation)
        self.job_wall_times.update(other.job_wall_times)
        self.combinations_checked += other.combinations_checked
        self.combinations_emitted += other.combinations_emitted
        self.shuffle_bytes += other.shuffle_bytes
        self.spilled_reducers += other.spilled_reducers


class PlannerOptions(BaseModel):
    """Knobs of the planner."""

    lambda_: float = Field(
        default=0.4, ge=0, le=1, alias="lambda", description="Weight of duplication against workload"
    )
    seed: int = Field(default=0, description="Seed for sampling and ids")
    max_len: int = Field(default=6, description="Hop cap for join paths")
    sample_rate: float = Field(default=0.2, gt=0, le=1, description="Sampling fraction")
    k_max: int = Field(default=64, ge=1, description="Reduce count cap when costing")
    max_cells: int = Field(default=1 << 16, ge=4, description="Cell budget per cube")
    eta_max: int = Field(default=10, ge=1, description="Largest recursion depth")
    baseline: Optional[Literal["pairwise"]] = Field(
        default=None, description="Restrict the plan to single-edge jobs"
    )
    partitioner: str = Field(default="hilbert", description="Partitioner name")

    model_config = {"populate_by_name": True}


class RunConfig(BaseModel):
    """Configuration of one CLI invocation."""

    query: Optional[str] = Field(default=None, description="Query file path")
    relation_path: List[str] = Field(
        default_factory=list, description="Directories searched for relation files"
    )
    k_p: int = Field(default=16, ge=1, description="Worker budget")
    calibration: Optional[str] = Field(default=None, description="Profile path")
    lambda_: float = Field(default=0.4, ge=0, le=1, alias="lambda")
    seed: int = Field(default=0, ge=-(1 << 63), lt=1 << 64)
    max_len: int = Field(default=6, ge=1)
    sample_rate: float = Field(default=0.2, gt=0, le=1)
    baseline: Optional[Literal["pairwise"]] = Field(default=None)
    out: Optional[str] = Field(default=None, description="Result rows path")
    report: Optional[str] = Field(default=None, description="Run report path")
    dump_partition: Optional[str] = Field(default=None)
    verify: bool = Field(default=False)
    fresh_stats: bool = Field(default=False)

    model_config = {"populate_by_name": True}

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
            return cls.model_validate(data)
        except OSError as e:
            raise ConfigurationError(f"Cannot read config {path}: {e}")
        except ValueError as e:
            raise ConfigurationError(f"Invalid config {path}: {e}")

    def planner_options(self) -> PlannerOptions:
        return PlannerOptions(
            lambda_=self.lambda_,
            seed=self.seed,
            max_len=self.max_len,
            sample_rate=self.sample_rate,
            baseline=self.baseline,
        )
