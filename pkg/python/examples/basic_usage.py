"""Basic usage examples for thetamr."""

import tempfile
from pathlib import Path

from thetamr import PlannerOptions, engine

LEGS = {
    "F1": [(101, 0, 90), (102, 60, 150), (103, 200, 280), (104, 30, 100)],
    "F2": [(201, 130, 220), (202, 160, 250), (203, 300, 360), (204, 90, 170)],
    "F3": [(301, 250, 330), (302, 400, 480), (303, 200, 260), (304, 280, 350)],
}

QUERY = """\
# connecting flights with a 30 minute stop-over
RELATION F1 FROM "f1.csv";
RELATION F2 FROM "f2.csv";
RELATION F3 FROM "f3.csv";
JOIN F1.arr + 30 < F2.dep;
JOIN F2.arr + 30 < F3.dep;
SELECT F1.fno, F2.fno, F3.fno;
"""


def write_itinerary(directory: Path) -> Path:
    for name, rows in LEGS.items():
        lines = ["fno:integer,dep:integer,arr:integer"]
        lines += [",".join(str(v) for v in row) for row in rows]
        (directory / f"{name.lower()}.csv").write_text("\n".join(lines) + "\n")
    path = directory / "itinerary.q"
    path.write_text(QUERY)
    return path


def basic_example(query_path: Path):
    """Plan and run the itinerary query."""
    print("=== Basic Example ===")

    e = engine(k_p=4)
    query = e.load_query(query_path)

    result = e.run(query)
    print(e.render_rows(query, sorted(result.rows)), end="")
    print(f"Jobs: {len(result.plan.jobs)}, merges: {len(result.plan.merges)}")
    print(f"Wall time: {result.report.total_wall_time:.4f}s")
    print(f"Matches brute force: {e.verify(query, result.output)}")


def explain_example(query_path: Path):
    """Show why the planner chose its plan."""
    print("\n=== Explain ===")

    e = engine(k_p=4)
    query = e.load_query(query_path)
    print(e.explain(query))


def baseline_example(query_path: Path):
    """Compare with the pairwise baseline."""
    print("\n=== Pairwise Baseline ===")

    for baseline in (None, "pairwise"):
        e = engine(k_p=4, options=PlannerOptions(baseline=baseline))
        query = e.load_query(query_path)
        plan = e.plan(query).plan
        print(f"{plan.strategy}: estimated makespan {plan.makespan:.4g}s")


if __name__ == "__main__":
    with tempfile.TemporaryDirectory() as directory:
        path = write_itinerary(Path(directory))
        basic_example(path)
        explain_example(path)
        baseline_example(path)
