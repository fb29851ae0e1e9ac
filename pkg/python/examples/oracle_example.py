"""Check planned execution against brute force on random queries."""

import numpy as np
from thetamr import brute_force_join, engine
from thetamr.oracle import oracle_check, random_query


def single_query():
    """Run one random query and compare with the nested-loop oracle."""
    print("=== Single Query ===")

    query = random_query(np.random.default_rng(3), max_tuples=40)
    e = engine(k_p=6)
    result = e.run(query)

    oracle = brute_force_join(query)
    print(f"{len(query.relations)} relations, {len(query.conditions)} conditions")
    print(f"plan rows: {len(result.output)}, oracle rows: {len(oracle)}")
    print(f"equal: {result.output.equals(oracle)}")


def suite():
    """A small equivalence suite."""
    print("\n=== Suite ===")

    result = oracle_check(count=10, max_tuples=40, seed=7, k_p=6)
    print(f"{result.passed}/{result.total} passed, operators: {result.operators}")


if __name__ == "__main__":
    single_query()
    suite()
