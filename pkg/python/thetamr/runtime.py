"""Embedded map/shuffle/reduce runtime, merge operator and brute-force oracle."""

import logging
import math
import tempfile
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path
from typing import (
    Any,
    Dict,
    Iterator,
    List,
    Mapping,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np

from thetamr.exceptions import OracleGuardError, PlanConsistencyError
from thetamr.partitioners import (
    PartitionAssignment,
    build_partition,
    cell_of_tuple,
    choose_eta,
)
from thetamr.relational import Query, Relation, join_combinations, render_value
from thetamr.seeding import global_ids
from thetamr.types import (
    ID_BYTES,
    CalibrationProfile,
    CubeConfig,
    ExecutionPlan,
    JobCandidate,
    MergeStep,
    PlannerOptions,
    RunReport,
    ThetaCondition,
)

logger = logging.getLogger(__name__)

ORACLE_LIMIT = 100_000_000


class MapEmission(NamedTuple):
    """One tuple copy shipped to one component."""

    component_id: int
    relation: str
    global_id: int
    values: Tuple[Any, ...]


class MapOutput(NamedTuple):
    """Emissions of one map task, held column-wise."""

    relation: str
    positions: np.ndarray
    components: np.ndarray


class JobOutput:
    """Result combinations as global-id vectors, one column per relation."""

    def __init__(self, relations: Sequence[str], ids: np.ndarray):
        self.relations = list(relations)
        ids = np.asarray(ids, dtype=np.int64)
        self.ids = ids.reshape(-1, len(self.relations)) if ids.size == 0 else ids

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def bytes(self) -> int:
        return int(self.ids.size * ID_BYTES)

    def column(self, relation: str) -> np.ndarray:
        try:
            return self.ids[:, self.relations.index(relation)]
        except ValueError:
            raise PlanConsistencyError(
                f"output carries no tag for relation '{relation}'"
            )

    def reorder(self, relations: Sequence[str]) -> "JobOutput":
        if not relations:
            return JobOutput([], np.empty((len(self), 0), dtype=np.int64))
        columns = [self.column(r) for r in relations]
        return JobOutput(relations, np.stack(columns, axis=1))

    def canonical(self, relations: Optional[Sequence[str]] = None) -> "JobOutput":
        """Columns in the given order, rows sorted by id vector."""
        out = self.reorder(relations or self.relations)
        if len(out) > 1:
            out.ids = out.ids[np.lexsort(out.ids.T[::-1])]
        return out

    def rows(self) -> List[Dict[str, int]]:
        return [dict(zip(self.relations, map(int, row))) for row in self.ids]

    def duplicate_count(self) -> int:
        if len(self) == 0:
            return 0
        return len(self) - len(np.unique(self.ids, axis=0))

    def assert_exactly_once(self) -> None:
        duplicates = self.duplicate_count()
        if duplicates:
            raise PlanConsistencyError(
                f"{duplicates} duplicate id combinations over {self.relations}"
            )

    def equals(self, other: "JobOutput") -> bool:
        """Multiset equality irrespective of column and row order."""
        if sorted(self.relations) != sorted(other.relations):
            return False
        a = self.canonical(sorted(self.relations))
        b = other.canonical(sorted(other.relations))
        return a.ids.shape == b.ids.shape and bool(np.array_equal(a.ids, b.ids))


class _WorkerGauge:
    """Counts busy workers and records the peak."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.busy = 0
        self.peak = 0

    @contextmanager
    def slot(self, permit: Optional[threading.Semaphore] = None) -> Iterator[None]:
        """One busy worker; releases `permit`, taken by the submitter, on exit."""
        with self._lock:
            self.busy += 1
            self.peak = max(self.peak, self.busy)
        try:
            yield
        finally:
            with self._lock:
                self.busy -= 1
            if permit is not None:
                permit.release()


class Runtime:
    """
    Executes jobs and plans over in-memory relations.

    Global ids come from one seeded permutation per relation, so every job
    and the oracle agree on them.
    """

    def __init__(
        self,
        relations: Union[Mapping[str, Relation], Sequence[Relation]],
        conditions: Sequence[ThetaCondition],
        profile: Optional[CalibrationProfile] = None,
        seed: int = 0,
        options: Optional[PlannerOptions] = None,
        scratch_dir: Optional[Union[str, Path]] = None,
    ):
        if not isinstance(relations, Mapping):
            relations = {r.name: r for r in relations}
        self.relations: Dict[str, Relation] = dict(relations)
        self.conditions = list(conditions)
        self.profile = profile or CalibrationProfile.default()
        self.seed = seed
        self.options = options or PlannerOptions(seed=seed)
        self.scratch_dir = scratch_dir
        self._ids: Dict[str, np.ndarray] = {}
        self._positions: Dict[str, np.ndarray] = {}
        self.gauge = _WorkerGauge()
        self.last_report: Optional[RunReport] = None

    def ids(self, name: str) -> np.ndarray:
        """Global id of each row position."""
        if name not in self._ids:
            relation = self.relations[name]
            self._ids[name] = global_ids(self.seed, name, relation.cardinality)
        return self._ids[name]

    def positions(self, name: str) -> np.ndarray:
        """Row position of each global id (index gid - 1)."""
        if name not in self._positions:
            self._positions[name] = np.argsort(self.ids(name))
        return self._positions[name]

    def conditions_among(self, relations: Sequence[str]) -> List[ThetaCondition]:
        members = set(relations)
        return [c for c in self.conditions if set(c.relations) <= members]

    def _needed(self, name: str, conds: Sequence[ThetaCondition]) -> List[str]:
        wanted = {
            side.ref.attribute
            for c in conds
            for side in (c.left, c.right)
            if side.ref.relation == name
        }
        return [a for a in self.relations[name].schema.names if a in wanted]

    def _payload_bytes(self, name: str, attributes: Sequence[str]) -> int:
        relation = self.relations[name]
        return ID_BYTES + sum(relation.column(a).dtype.itemsize for a in attributes)

    def partition_for(self, job: JobCandidate, k_r: int) -> PartitionAssignment:
        cards = [max(1, self.relations[name].cardinality) for name in job.relations]
        eta = choose_eta(cards, self.options.max_cells, self.options.eta_max)
        config = CubeConfig(cardinalities=cards, eta=eta)
        return build_partition(config, k_r, self.options.partitioner)

    def _map_task(
        self, name: str, dim: int, pa: PartitionAssignment, begin: int, end: int
    ) -> MapOutput:
        positions = np.arange(begin, end, dtype=np.int64)
        cells = cell_of_tuple(
            self.ids(name)[positions], self.relations[name].cardinality, pa.config.eta
        )
        rows, components = np.nonzero(pa.membership(dim)[cells])
        return MapOutput(name, positions[rows], components.astype(np.int64))

    def emissions(self, output: MapOutput) -> Iterator[MapEmission]:
        relation = self.relations[output.relation]
        ids = self.ids(output.relation)
        for position, component in zip(output.positions, output.components):
            yield MapEmission(
                int(component),
                output.relation,
                int(ids[position]),
                relation.row(int(position)),
            )

    def _reduce_task(
        self,
        job: JobCandidate,
        pa: PartitionAssignment,
        component: int,
        groups: Dict[str, np.ndarray],
        conds: Sequence[ThetaCondition],
        needed: Mapping[str, List[str]],
        input_bytes: int,
        spill_dir: Optional[str],
    ) -> Tuple[np.ndarray, int, bool]:
        spilled = False
        if input_bytes > self.profile.reducer_memory_cap and spill_dir is not None:
            path = Path(spill_dir) / f"reduce-{id(job)}-{component}.npz"
            np.savez(path, **groups)
            with np.load(path) as archive:
                groups = {name: archive[name] for name in groups}
            path.unlink()
            spilled = True

        order = job.relations
        columns = {
            name: {a: self.relations[name].column(a)[groups[name]] for a in needed[name]}
            or {"position": groups[name]}
            for name in order
        }
        local, checked = join_combinations(order, columns, conds)
        if len(local) == 0:
            return np.empty((0, len(order)), dtype=np.int64), checked, spilled

        gids = np.stack(
            [self.ids(name)[groups[name][local[:, d]]] for d, name in enumerate(order)],
            axis=1,
        )
        cells = np.stack(
            [
                cell_of_tuple(
                    gids[:, d], self.relations[name].cardinality, pa.config.eta
                )
                for d, name in enumerate(order)
            ],
            axis=1,
        )
        owned = pa.owner(cells) == component
        return gids[owned], checked, spilled

    def run_mrj(
        self,
        job: JobCandidate,
        pa: PartitionAssignment,
        workers: int,
        pool: Optional[ThreadPoolExecutor] = None,
        task_id: str = "J1",
    ) -> Tuple[JobOutput, RunReport]:
        """
        Run one job: map, shuffle barrier, reduce.

        Reduce tasks emit only combinations whose joint cell their component
        owns; outputs are not deduplicated.
        """
        if workers < 1:
            raise PlanConsistencyError(f"workers={workers} must be at least 1")
        if pa.config.dims != len(job.relations):
            raise PlanConsistencyError("partition dimensions do not match the job")
        own_pool = pool is None
        pool = pool or ThreadPoolExecutor(max_workers=workers)
        semaphore = threading.Semaphore(workers)
        report = RunReport()
        started = time.perf_counter()
        conds = self.conditions_among(job.relations)
        needed = {name: self._needed(name, conds) for name in job.relations}

        def timed(key: str, table: Dict[str, float], fn, *args):
            with self.gauge.slot(semaphore):
                begin = time.perf_counter()
                result = fn(*args)
                table[key] = time.perf_counter() - begin
                return result

        def submit(key: str, table: Dict[str, float], fn, *args) -> Future:
            # taken on the submitting thread; pool threads never block on it
            semaphore.acquire()
            try:
                return pool.submit(timed, key, table, fn, *args)
            except BaseException:
                semaphore.release()
                raise

        try:
            futures: List[Tuple[str, Future]] = []
            for dim, name in enumerate(job.relations):
                relation = self.relations[name]
                block = max(1, int(self.profile.block_size // relation.avg_row_bytes))
                for number, begin in enumerate(range(0, relation.cardinality, block)):
                    end = min(begin + block, relation.cardinality)
                    key = f"{task_id}/map/{name}/{number}"
                    future = submit(
                        key,
                        report.map_task_times,
                        self._map_task,
                        name,
                        dim,
                        pa,
                        begin,
                        end,
                    )
                    futures.append((name, future))
            outputs = [(name, future.result()) for name, future in futures]

            groups: Dict[int, Dict[str, np.ndarray]] = {
                c: {} for c in range(1, pa.k_r + 1)
            }
            for name in job.relations:
                parts = [o for n, o in outputs if n == name]
                positions = np.concatenate(
                    [o.positions for o in parts] + [np.empty(0, np.int64)]
                )
                components = np.concatenate(
                    [o.components for o in parts] + [np.empty(0, np.int64)]
                )
                report.emitted_per_relation[f"{task_id}/{name}"] = int(len(positions))
                order = np.lexsort((positions, components))
                positions, components = positions[order], components[order]
                bounds = np.searchsorted(components, np.arange(1, pa.k_r + 2))
                for c in range(1, pa.k_r + 1):
                    groups[c][name] = positions[bounds[c - 1] : bounds[c]]

            payload = {n: self._payload_bytes(n, needed[n]) for n in job.relations}
            spill_dir = None
            spill_root = None
            reduce_futures = []
            for c in range(1, pa.k_r + 1):
                size = sum(len(groups[c][n]) * payload[n] for n in job.relations)
                report.reducer_input_bytes[f"{task_id}/{c}"] = int(size)
                if size > self.profile.reducer_memory_cap and spill_root is None:
                    spill_root = tempfile.TemporaryDirectory(dir=self.scratch_dir)
                    spill_dir = spill_root.name
                reduce_futures.append(
                    submit(
                        f"{task_id}/reduce/{c}",
                        report.reduce_task_times,
                        self._reduce_task,
                        job,
                        pa,
                        c,
                        groups[c],
                        conds,
                        needed,
                        size,
                        spill_dir,
                    )
                )
            results = [future.result() for future in reduce_futures]
            if spill_root is not None:
                spill_root.cleanup()
        finally:
            if own_pool:
                pool.shutdown(wait=True)

        width = len(job.relations)
        pieces = [ids for ids, _, _ in results] + [np.empty((0, width), np.int64)]
        output = JobOutput(job.relations, np.vstack(pieces))
        report.combinations_checked = sum(checked for _, checked, _ in results)
        report.combinations_emitted = len(output)
        report.spilled_reducers = sum(1 for _, _, spilled in results if spilled)
        report.shuffle_bytes = sum(report.reducer_input_bytes.values())
        report.max_concurrent_workers = self.gauge.peak
        elapsed = time.perf_counter() - started
        report.job_wall_times[task_id] = elapsed
        report.total_wall_time = elapsed
        output.assert_exactly_once()
        logger.debug(
            "Job %s over %s: %d rows, %d reducers, %.3fs",
            task_id, job.relations, len(output), pa.k_r, elapsed,
        )
        return output, report

    def _merge_task(self, merge: MergeStep, outputs: Mapping[str, JobOutput]) -> JobOutput:
        with self.gauge.slot():
            return run_merge(outputs[merge.left], outputs[merge.right], merge.keys)

    def run_plan(self, plan: ExecutionPlan) -> Tuple[JobOutput, RunReport]:
        """
        Run every job on a pool of k_p workers, then the merge tree.

        `last_report` holds whatever was measured, also when a task fails.
        """
        report = RunReport()
        self.last_report = report
        started = time.perf_counter()
        self.gauge = _WorkerGauge()
        outputs: Dict[str, JobOutput] = {}
        try:
            with ThreadPoolExecutor(max_workers=plan.k_p) as pool:
                with ThreadPoolExecutor(max_workers=max(1, len(plan.jobs))) as drivers:
                    running = {
                        job.task_id: drivers.submit(
                            self.run_mrj,
                            job.candidate,
                            self.partition_for(job.candidate, job.k_r),
                            job.allotment,
                            pool,
                            job.task_id,
                        )
                        for job in sorted(plan.jobs, key=lambda j: (j.start, j.task_id))
                    }
                    for task_id, future in running.items():
                        output, job_report = future.result()
                        outputs[task_id] = output
                        report.absorb(job_report)

                for merge in plan.merges:
                    begin = time.perf_counter()
                    outputs[merge.task_id] = pool.submit(
                        self._merge_task, merge, outputs
                    ).result()
                    report.merge_wall_times[merge.task_id] = time.perf_counter() - begin
        finally:
            report.max_concurrent_workers = self.gauge.peak
            report.total_wall_time = time.perf_counter() - started

        final = outputs[plan.output_task]
        final.assert_exactly_once()
        logger.info(
            "Plan finished: %d rows in %.3fs, peak %d/%d workers",
            len(final), report.total_wall_time, report.max_concurrent_workers, plan.k_p,
        )
        return final, report

    def project(
        self, output: JobOutput, projection: Sequence[Any]
    ) -> List[Tuple[Any, ...]]:
        """Attribute values of each result row, in projection order."""
        columns = []
        for ref in projection:
            relation = self.relations[ref.relation]
            positions = self.positions(ref.relation)[output.column(ref.relation) - 1]
            columns.append(relation.column(ref.attribute)[positions])
        if not columns:
            return []
        return [tuple(v.item() for v in row) for row in zip(*columns)]


def run_mrj(
    job: JobCandidate,
    pa: PartitionAssignment,
    relations: Union[Mapping[str, Relation], Sequence[Relation]],
    workers: int,
    conditions: Sequence[ThetaCondition],
    seed: int = 0,
    profile: Optional[CalibrationProfile] = None,
) -> Tuple[JobOutput, RunReport]:
    runtime = Runtime(relations, conditions, profile, seed)
    return runtime.run_mrj(job, pa, workers)


def run_merge(left: JobOutput, right: JobOutput, keys: Sequence[str]) -> JobOutput:
    """
    Hash-join two outputs on the global ids of the key relations.

    Raises:
        PlanConsistencyError: If keys are empty or an input lacks a key tag
    """
    if not keys:
        raise PlanConsistencyError("merge needs at least one key relation")
    for side, output in (("left", left), ("right", right)):
        missing = [k for k in keys if k not in output.relations]
        if missing:
            raise PlanConsistencyError(f"{side} input has no tag for {missing}")

    shared = [r for r in left.relations if r in right.relations]
    extra = [r for r in right.relations if r not in left.relations]
    relations = left.relations + extra
    if len(left) == 0 or len(right) == 0:
        return JobOutput(relations, np.empty((0, len(relations)), dtype=np.int64))

    index: Dict[Tuple[int, ...], List[int]] = {}
    left_keys = np.stack([left.column(k) for k in keys], axis=1).tolist()
    for i, key in enumerate(map(tuple, left_keys)):
        index.setdefault(key, []).append(i)
    right_keys = np.stack([right.column(k) for k in keys], axis=1).tolist()
    left_rows, right_rows = [], []
    for j, key in enumerate(map(tuple, right_keys)):
        for i in index.get(key, ()):
            left_rows.append(i)
            right_rows.append(j)
    li = np.asarray(left_rows, dtype=np.int64)
    ri = np.asarray(right_rows, dtype=np.int64)
    agree = np.ones(len(li), dtype=bool)
    for r in shared:
        if r not in keys:
            agree &= left.column(r)[li] == right.column(r)[ri]
    li, ri = li[agree], ri[agree]
    parts = [left.ids[li]] + ([right.reorder(extra).ids[ri]] if extra else [])
    return JobOutput(relations, np.hstack(parts))


def brute_force_join(
    q: Query, seed: int = 0, limit: int = ORACLE_LIMIT
) -> JobOutput:
    """
    Nested-loop evaluation of every condition over the full cross product.

    Raises:
        OracleGuardError: If the cross product exceeds `limit` combinations
    """
    combinations = math.prod(r.cardinality for r in q.relations)
    if combinations > limit:
        raise OracleGuardError(combinations, limit)
    names = q.names
    columns = {r.name: r.columns for r in q.relations}
    local, _ = join_combinations(names, columns, q.conditions)
    ids = np.empty((len(local), len(names)), dtype=np.int64)
    for d, name in enumerate(names):
        ids[:, d] = global_ids(seed, name, q.relation(name).cardinality)[local[:, d]]
    return JobOutput(names, ids).canonical()


def format_rows(rows: Sequence[Tuple[Any, ...]], kinds: Sequence[str]) -> str:
    """Comma-separated lines, as written by `run --out`."""
    return "".join(
        ",".join(render_value(k, v) for k, v in zip(kinds, row)) + "\n"  # type: ignore[arg-type]
        for row in rows
    )
