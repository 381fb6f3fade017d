"""End-to-end acceptance checks, one test per criterion.

Each test records a single ``criterion N: PASS|FAIL`` line that is printed
in the terminal summary, then asserts.
"""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, random_connected_graph, random_symmetric
from sparsegeom.config import (
    TABLE1_GEOMETRIC,
    TABLE1_GEOMETRIC_FRACTION,
    TABLE1_SBM,
    TABLE1_SBM_FRACTION,
    ExperimentConfig,
)
from sparsegeom.experiments import (
    CONTROL_LEVEL,
    budget_groups,
    run_geometry,
    run_stability,
    run_training,
    spearman,
    write_geometry,
    write_stability,
    write_training,
)
from sparsegeom.geometry import class_stat_gaps, gram_norm_gaps, max_pairwise_sq_distance_gap
from sparsegeom.graph import laplacian
from sparsegeom.model import GnnModel, init_weights
from sparsegeom.numerics import generalized_extremal_eigs, operator_norm, pseudoinverse
from sparsegeom.sparsify import empirical_distortion_exact, er_sparsify, resistances
from sparsegeom.train import gradient, loss

FAMILIES = ("sbm", "geometric")
TABLE1 = {
    "sbm": (TABLE1_SBM, TABLE1_SBM_FRACTION),
    "geometric": (TABLE1_GEOMETRIC, TABLE1_GEOMETRIC_FRACTION),
}
SLACK = 1e-8


def record(n, ok, detail):
    ACCEPTANCE_LINES.append(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    print(ACCEPTANCE_LINES[-1])
    assert ok, detail


def family_config(family, jobs=1):
    cfg = ExperimentConfig(jobs=jobs)
    cfg.dataset.families = (family,)
    return cfg


def timed(fn, cfg):
    start = time.perf_counter()
    result = fn(cfg)
    return result, time.perf_counter() - start


@pytest.fixture(scope="module")
def stability():
    return {f: timed(run_stability, family_config(f)) for f in FAMILIES}


@pytest.fixture(scope="module")
def training():
    return timed(run_training, ExperimentConfig())


@pytest.fixture(scope="module")
def geometry():
    return timed(run_geometry, ExperimentConfig())


def stability_rows(stability, family):
    return stability[family][0].rows


# ---- 1 / 2: forward certificates ---------------------------------------------


def test_criterion_01_filter_certificate(stability):
    parts, ok = [], True
    for f in FAMILIES:
        rows = stability_rows(stability, f)
        bad = [r for r in rows if not r["_abs_filter_err"] <= r["_constants"].C_p[0] * r["eps_emp"] + SLACK]
        secs = stability[f][1]
        ok &= len(rows) >= 30 and not bad and secs <= 120
        parts.append(f"{f}: {len(bad)}/{len(rows)} violations in {secs:.1f}s")
    record(1, ok, "; ".join(parts))


def test_criterion_02_representation_and_gram_certificates(stability):
    parts, ok = [], True
    for f in FAMILIES:
        rows = stability_rows(stability, f)
        bad = 0
        for r in rows:
            c, eps = r["_constants"], r["eps_emp"]
            spec, frob = r["_gram_gaps"]
            bad += not (
                r["_abs_repr_err"] <= c.C_rep * eps + SLACK
                and spec <= c.C_gram_2 * eps + SLACK
                and frob <= c.C_gram_F * eps + SLACK
            )
        ok &= bad == 0 and len(rows) >= 30
        parts.append(f"{f}: {bad}/{len(rows)} violations")
    record(2, ok, "; ".join(parts))


# ---- 3 / 4: magnitudes and Table 1 ---------------------------------------------


def test_criterion_03_error_magnitudes_and_trend(stability):
    keys = ("eps_emp", "rel_filter_err", "rel_repr_err", "rel_gram_err")
    parts, ok = [], True
    for f in FAMILIES:
        result = stability[f][0]
        rows, levels = result.rows, result.levels[f]
        means = {s["level_index"]: s["mean_eps_emp"] for s in result.table1}
        # largest level whose realized distortion lies in the stated window
        window = [j for j, e in means.items() if 0.6 <= e <= 0.8]
        if not window:
            ok = False
            parts.append(f"{f}: no level with mean eps in [0.6, 0.8] ({sorted(means.values())})")
            continue
        j = max(window, key=lambda i: means[i])
        at = [r for r in rows if r["level_index"] == j]
        repr_max = max(r["rel_repr_err"] for r in at)
        gram_max = max(r["rel_gram_err"] for r in at)
        grouped = budget_groups(rows, levels, keys)
        rhos = [spearman(grouped[:, 0], grouped[:, i]) for i in (1, 2, 3)]
        raw = [spearman([means[i] for i in sorted(means)], [s[k] for s in result.table1]) for k in
               ("mean_rel_filter_err", "mean_rel_repr_err", "mean_rel_gram_err")]
        ok &= repr_max <= 0.12 and gram_max <= 0.12 and all(r >= 0.9 for r in rhos)
        parts.append(
            f"{f}: level {j} eps {means[j]:.3f} max repr {repr_max:.3f} max gram {gram_max:.3f}; "
            f"spearman by budget {np.round(rhos, 3).tolist()} (per level {np.round(raw, 3).tolist()})"
        )
    record(3, ok, "; ".join(parts))


def test_criterion_04_table1(stability):
    parts, ok = [], True
    for f in FAMILIES:
        eps_ref, frac_ref = TABLE1[f]
        table = stability[f][0].table1
        d_eps = [abs(s["mean_eps_emp"] - e) for s, e in zip(table, eps_ref)]
        d_frac = [abs(s["mean_retained_fraction"] - q) for s, q in zip(table, frac_ref)]
        ok &= len(table) == len(eps_ref) and max(d_eps) <= 0.15 and max(d_frac) <= 0.12
        parts.append(f"{f}: max |d eps| {max(d_eps):.3f}, max |d frac| {max(d_frac):.3f}")
    record(4, ok, "; ".join(parts))


# ---- 5 / 6: training ------------------------------------------------------------


def test_criterion_05_training_gap_trend(training):
    result, _ = training
    parts, ok = [], True
    for f in FAMILIES:
        rows = result.trajectories[f]
        control = [r["rel_param_gap"] for r in rows if r["level_index"] == CONTROL_LEVEL]
        ok &= bool(control) and all(g == 0.0 for g in control)
        for depth in (1, 2):
            summ = [s for s in result.summary if s["dataset"] == f and s["depth"] == depth]
            rho = spearman([s["mean_eps_emp"] for s in summ], [s["mean_final_gap"] for s in summ])
            epochs = max(r["epoch"] for r in rows if r["depth"] == depth)
            ok &= len(summ) >= 4 and rho >= 0.8 and epochs == 100
            parts.append(f"{f} depth {depth}: spearman {rho:.3f} over {len(summ)} levels")
        parts.append(f"{f} control max gap {max(control):.1f}")
    record(5, ok, "; ".join(parts))


def _finite_difference(m, S, X, Y, h=1e-5):
    out = []
    for k, W in enumerate(m.weights):
        G = np.zeros_like(W)
        for idx in np.ndindex(W.shape):
            E = np.zeros_like(W)
            E[idx] = h
            plus = m.with_weights([w + E if j == k else w for j, w in enumerate(m.weights)])
            minus = m.with_weights([w - E if j == k else w for j, w in enumerate(m.weights)])
            G[idx] = (loss(plus, S, X, Y) - loss(minus, S, X, Y)) / (2 * h)
        out.append(G)
    return out


def test_criterion_06_gradient_oracle():
    rng = np.random.default_rng(6)
    worst, count = 0.0, 0
    for depth in (1, 2):
        for act in ("identity", "tanh"):
            for _ in range(5):
                n = 8
                S = random_symmetric(rng, n) / 3
                X = rng.standard_normal((n, 3))
                dims = (3, 4, 2)[: depth + 1] if depth == 2 else (3, 2)
                m = GnnModel.build([(1.0, -0.6, 0.15)] * depth, init_weights(dims, seed=count), [act] * depth)
                Y = rng.standard_normal((n, dims[-1]))
                for A, N in zip(gradient(m, S, X, Y), _finite_difference(m, S, X, Y)):
                    worst = max(worst, np.max(np.abs(A - N)) / max(np.max(np.abs(N)), 1e-8))
                count += 1
    record(6, count == 20 and worst <= 1e-4, f"{count} instances, worst relative error {worst:.2e}")


# ---- 7 / 8: distance and class-statistic bounds, algebraic identities ----------


def test_criterion_07_distance_and_class_certificates(stability, geometry):
    rng = np.random.default_rng(7)
    bad_random = 0
    for _ in range(100):
        n, d = int(rng.integers(5, 30)), int(rng.integers(1, 8))
        Z = rng.standard_normal((n, d))
        Zt = Z + rng.uniform(0.01, 1.0) * rng.standard_normal((n, d))
        labels = rng.permutation(np.arange(n) % int(rng.integers(1, 4)))
        gap, _ = max_pairwise_sq_distance_gap(Z, Zt)
        ok = gap <= 4 * gram_norm_gaps(Z, Zt)[0] + SLACK
        ok &= all(g.mean_pass and g.cov_pass for g in class_stat_gaps(Z, Zt, labels))
        bad_random += not ok
    draws = [r for f in FAMILIES for r in stability_rows(stability, f)]
    bad_stab = sum(
        not (r["_flags"]["pairwise_mechanism"] and all(g.mean_pass and g.cov_pass for g in r["_class_gaps"]))
        for r in draws
    )
    geo_rows = geometry[0].rows
    bad_geo = sum(not all(g.mean_pass and g.cov_pass for g in r["_class_gaps"]) for r in geo_rows)
    record(
        7,
        bad_random == bad_stab == bad_geo == 0,
        f"random {bad_random}/100, stability draws {bad_stab}/{len(draws)}, geometry draws {bad_geo}/{len(geo_rows)}",
    )


def test_criterion_08_identity_suite():
    rng = np.random.default_rng(8)
    trials = 100
    fails = dict.fromkeys(("telescoping", "operator_diff", "foster", "moore_penrose", "envelope"), 0)
    for t in range(trials):
        n = int(rng.integers(3, 9))
        A, B = random_symmetric(rng, n), random_symmetric(rng, n)
        for r in range(1, 5):
            lhs = np.linalg.matrix_power(A, r) - np.linalg.matrix_power(B, r)
            rhs = sum(np.linalg.matrix_power(A, r - 1 - j) @ (A - B) @ np.linalg.matrix_power(B, j) for j in range(r))
            fails["telescoping"] += np.linalg.norm(lhs - rhs) > 1e-9 * max(1.0, np.linalg.norm(lhs))

        g = random_connected_graph(rng, int(rng.integers(4, 16)))
        res = resistances(g)
        fails["foster"] += abs(res.leverage(g).sum() - (g.n - 1)) > 1e-6 * (g.n - 1)

        L = laplacian(g).matrix
        P = pseudoinverse(L)
        fails["moore_penrose"] += not (
            np.linalg.norm(L @ P @ L - L) <= 1e-8 * operator_norm(L)
            and np.linalg.norm(P @ L @ P - P) <= 1e-8 * operator_norm(P)
            and np.linalg.norm((L @ P).T - L @ P) <= 1e-8
            and np.linalg.norm((P @ L).T - P @ L) <= 1e-8
        )

        Lt = laplacian(er_sparsify(g, res, 3 * g.num_edges, t).graph).matrix
        eps = empirical_distortion_exact(L, Lt)
        fails["operator_diff"] += operator_norm(L - Lt) > eps * operator_norm(L) + SLACK

        lo, hi = generalized_extremal_eigs(Lt, L)
        X = rng.standard_normal((g.n, 50))
        X -= X.mean(axis=0)
        q = np.einsum("ij,ij->j", X, Lt @ X) / np.einsum("ij,ij->j", X, L @ X)
        fails["envelope"] += not (np.all(q >= lo - SLACK) and np.all(q <= hi + SLACK))
    detail = ", ".join(f"{k} {v}/{trials}" for k, v in fails.items())
    record(8, not any(fails.values()), f"failures: {detail}")


# ---- 9 / 10: geometry prediction and determinism -------------------------------------


def test_criterion_09_gram_predicts_knn(geometry):
    result, _ = geometry
    parts, ok = [], True
    for s in result.summary:
        ok &= s["points"] >= 18 and s["spearman_gram_knn"] <= -0.7
        parts.append(f"{s['dataset']}: spearman {s['spearman_gram_knn']:.3f} over {s['points']} draws")
    ok &= len(result.summary) == 2
    record(9, ok, "; ".join(parts))


def _snapshot(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


def test_criterion_10_determinism(tmp_path, stability, training, geometry):
    start = time.perf_counter()
    serial_secs = sum(s for _, s in stability.values()) + training[1] + geometry[1]
    same = True
    for name, run, write, serial in (
        ("stability", run_stability, write_stability, None),
        ("training", run_training, write_training, training[0]),
        ("geometry", run_geometry, write_geometry, geometry[0]),
    ):
        a, b = tmp_path / f"{name}_1", tmp_path / f"{name}_4"
        if serial is None:
            serial = run(ExperimentConfig())
        write(serial, ExperimentConfig(), a)
        write(run(ExperimentConfig(jobs=4)), ExperimentConfig(jobs=4), b)
        same &= _snapshot(a) == _snapshot(b)
    total = serial_secs + time.perf_counter() - start
    record(10, same and total <= 1800, f"jobs=1 vs jobs=4 byte-identical: {same}; pipeline wall-clock {total:.0f}s")
