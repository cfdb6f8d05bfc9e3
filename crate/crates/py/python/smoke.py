"""Smoke test for the nestavg Python bindings.

Build and install first, e.g. `maturin develop --release` inside crates/py,
then run `python python/smoke.py`.
"""

import json
import math
import random

import nestavg


def main() -> None:
    # Oracle risks on a small profile with nonincreasing theta.
    p = nestavg.RiskProfile.from_increments(100, [100.0, 25.0], [1.0, 1.0], 0.0, 2)
    w, r_simplex = p.oracle_simplex()
    _, r_box = p.oracle_box()
    risks, m_star, _ = p.risk_ms()
    assert abs(sum(w) - 1.0) < 1e-12
    assert r_box <= r_simplex <= risks[m_star - 1]
    assert abs((r_simplex - r_box) - 1.0 / 101.0) < 1e-12
    assert abs(p.oracle_grid(1)[1] - risks[m_star - 1]) < 1e-12

    # Feasible selection and averaging on a random design.
    rng = random.Random(1)
    n, k = 60, 4
    x = [[rng.gauss(0, 1) for _ in range(k)] for _ in range(n)]
    y = [sum(row[j] / (j + 1) for j in range(k)) + rng.gauss(0, 1) for row in x]
    d = nestavg.NestedDesign(x, [1, 2, 3, 4])
    index, scores = nestavg.select(y, d, "aic")
    assert 1 <= index <= 4 and len(scores) == 4
    w_mma, _ = nestavg.mma(y, d)
    w_jma2, _ = nestavg.jma(y, d, box=True)
    assert abs(sum(w_mma) - 1.0) < 1e-9 and all(0.0 <= v <= 1.0 for v in w_jma2)

    # Limiting curves.
    e = 1.0 / 1.6
    assert abs(nestavg.inc_beta(1.0, 1 - e, e) - math.pi / math.sin(math.pi * e)) < 1e-9
    ratios = [nestavg.limit_ratio(0.8, N, 2.0) for N in range(1, 11)]
    assert all(a < b < 1.0 for a, b in zip(ratios, ratios[1:]))

    # A tiny simulation and the inequality battery.
    cfg = {"example": "ex1", "n": 60, "decay": {"kind": "algebraic", "alpha": 1.0},
           "r2": 0.5, "replications": 10, "seed": 3}
    res = json.loads(nestavg.run_study(json.dumps(cfg)))
    assert res["replications"] == 10
    assert [r["normalized"] for r in res["rows"] if r["method"] == "mma"] == [1.0]
    assert all(v == 0 for _, _, v, _ in nestavg.verify_battery(7, 20))

    try:
        nestavg.select(y, d, "nope")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown criterion accepted")

    print("nestavg python smoke: ok")


if __name__ == "__main__":
    main()
