"""Smoke test for the evcdr_py extension.

Build and stage the module first:

    cargo build --release -p evcdr-py --features extension-module
    cp target/release/libevcdr_py.so python/evcdr_py.so
"""
import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import evcdr_py as ev

CONFIG = """
seed = 7
variants = ["standard", "purity_normalized", "evcdr"]

[model]
lattice = { kind = "ring", n = 4 }
j = 1.0
h = 1.5

[plan]
steps = 2
tau = 0.3
site = 0

[noise]
kind = "depolarizing"
p1 = 0.002
p2 = 0.01

[shots]
per_step = 6000
trajectories = 16

[cdr]
l = 2
m_count = 6
bootstrap = 20
"""


def main():
    assert ev.pauli_product("X", "Y") == "iZ", ev.pauli_product("X", "Y")
    assert ev.round_to_clifford(0.8) == math.pi / 2
    assert abs(ev.standard_estimate(1.0, 0.5) - 0.25) < 1e-12

    m0 = ev.magnetization("ring", 4, 1.0, 1.5, 0.3, 0, 0)
    assert abs(m0 - 1.0) < 1e-12
    exact = ev.magnetization("ring", 4, 1.0, 1.5, 0.01, 2, 0, exact=True)
    trotter = ev.magnetization("ring", 4, 1.0, 1.5, 0.01, 2, 0)
    assert abs(exact - trotter) < 1e-3

    assert ev.lightcone_sizes("ring", 12, 0.05, 3, 0) == [4, 8, 12]

    ev.validate_config(CONFIG)
    try:
        ev.validate_config(CONFIG.replace("steps = 2", "steps = 0"))
    except ValueError:
        pass
    else:
        raise AssertionError("steps = 0 accepted")

    rows = ev.run_experiment(CONFIG)
    again = ev.run_experiment(CONFIG)
    assert rows == again, "same seed must reproduce"
    assert {r["variant"] for r in rows} >= {"exact", "standard"}
    for r in rows:
        assert set(r) == set(ev.CSV_HEADER)
    oracle = ev.run_oracle(CONFIG)
    assert {r["variant"] for r in oracle} == {"trotter", "exact_evolution"}

    print(f"ok: {len(rows)} rows, oracle {len(oracle)} rows")


if __name__ == "__main__":
    main()
