"""Smoke test for the trajpref_py extension.

Build and install first, e.g. `pip install maturin && maturin build -m crates/python/Cargo.toml`
followed by `pip install target/wheels/trajpref-*.whl`, then run this file.
"""

import json
import math
import random
import tempfile

import trajpref_py as tp


def check_spd():
    rng = random.Random(0)
    n = 6
    b = [[rng.uniform(-1, 1) for _ in range(n)] for _ in range(n)]
    rows = [[sum(b[i][k] * b[j][k] for k in range(n)) / n + (0.1 if i == j else 0.0) for j in range(n)] for i in range(n)]
    c = tp.SpdMatrix(rows)
    back = tp.SpdMatrix.exp(c.log()).to_list()
    err = max(abs(back[i][j] - rows[i][j]) for i in range(n) for j in range(n))
    assert err < 1e-10, err
    assert all(v == 0.0 for v in c.tangent(c))

    a = tp.SpdMatrix([[1.0, 0.0], [0.0, 4.0]])
    d = tp.SpdMatrix([[4.0, 0.0], [0.0, 9.0]])
    m = tp.frechet_mean([a, d]).to_list()
    assert abs(m[0][0] - 2.0) < 1e-6 and abs(m[1][1] - 6.0) < 1e-6, m

    x = [[rng.gauss(0, 1) for _ in range(20)] for _ in range(32)]
    assert min(tp.ledoit_wolf(x).eigenvalues()) > 0


def check_trajectory():
    times = [0.0, 1.0, 2.0, 3.0]
    line = [[t, 0.5 * t, 0.0] for t in times]
    lifted = [[p[0], p[1], 1.0] for p in line]
    a = tp.Trajectory(0, times, line)
    b = tp.Trajectory(1, [2 * t for t in times], lifted)
    assert abs(a.distance(b) - 1.0) < 1e-6


def check_ranking():
    # 3 beats 1 and 2, 1 beats 2
    comps = [(0, 3, 1, 1, 0.9), (1, 2, 3, 2, 0.8), (2, 1, 2, 1, 0.6)]
    order = [i for i, _ in tp.rank_comparisons(comps, "borda")]
    assert order == [3, 1, 2], order
    conf = tp.rank_comparisons(comps, "borda_conf")
    assert conf[0][0] == 3
    v = tp.ndcg_at_k([2, 0, 1], {0: 0.0, 1: 0.5, 2: 1.0}, 3)
    assert abs(v - 0.6696) < 1e-4, v
    assert tp.kendall_tau([1, 2, 3], [3, 2, 1]) == -1.0


def check_pipeline():
    cfg = json.dumps({"seed": 4, "synth": {"n_tasks": 3}})
    session = tp.simulate(cfg)
    assert session.n_comparisons == 27
    with tempfile.TemporaryDirectory() as d:
        session.write(d)
        session = tp.Session.read(d)
    decoded = tp.decode(session, cfg)
    acc = decoded.accuracies(session)
    assert set(acc) == {"observation", "statement", "combined", "button"}
    assert len(decoded.verdicts("statement")) == 27
    result = tp.rank(session, decoded, ["borda", "borda_conf"])
    order = result.ranking("button", 0, "borda")
    assert sorted(order) == sorted(session.d_target(0))
    assert 0.0 <= result.mean_ndcg("button", "borda", 1) <= 1.0
    assert math.isfinite(json.loads(result.report_json())["sources"]["button"]["comparison_accuracy"])
    print(result.table())


if __name__ == "__main__":
    check_spd()
    check_trajectory()
    check_ranking()
    check_pipeline()
    print("trajpref_py", tp.__version__, "smoke test passed")
