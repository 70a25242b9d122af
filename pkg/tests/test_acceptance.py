"""Acceptance criteria, one test each. Every test prints a PASS/FAIL line and
the lines are repeated in the pytest terminal summary."""
import math

import numpy as np
import pytest

from mcflab.ambient import Euclidean, RoundSphere
from mcflab.cli import main
from mcflab.errors import PerturbationRejected
from mcflab.flow import FlowConfig, run_flow
from mcflab.functionals import F_functional, F_gradient, entropy, search_box, shrinker_residual
from mcflab.harness import (
    PiecewiseBudget,
    attempt_replacement,
    entropy_continuity_probe,
    piecewise_flow,
    verify_almost_mono_u,
    verify_entropy_almost_mono,
    verify_huisken,
    verify_J_monotone,
    volume_ratio_bound,
)
from mcflab.shapes import clifford_torus_mesh, ellipsoid, geodesic_sphere_in_s3, icosphere, torus

from . import oracles


def test_01_sphere_extinction(sphere_traj, criterion):
    term = sphere_traj.termination
    err = abs(term.t_est - 0.25)
    ok = term.cause == "Extinct" and err <= 0.0025
    assert criterion(1, "sphere extinction", ok, f"cause={term.cause} t_est={term.t_est:.5f} |err|={err:.2e} tol=2.5e-3")


@pytest.mark.slow
def test_02_curved_extinction_and_equator(criterion):
    amb = RoundSphere(4, 1.0)
    tr = run_flow(geodesic_sphere_in_s3(math.pi / 3, 4), amb)
    exact = 0.5 * math.log(2.0)
    rel = abs(tr.termination.t_est - exact) / exact

    eq0 = geodesic_sphere_in_s3(math.pi / 2, 3)
    eq = run_flow(eq0, amb, FlowConfig(max_steps=10_000, snapshot_stride=1000))
    # distance of each vertex from the initial (equatorial) surface
    disp = max(
        float(np.sqrt(m.vertices[:, 3] ** 2 + (np.linalg.norm(m.vertices[:, :3], axis=1) - 1.0) ** 2).max())
        for m in eq.meshes
    )
    drift = max(float(np.abs(m.vertices - eq0.vertices).max()) for m in eq.meshes)
    ok = tr.termination.cause == "Extinct" and rel <= 0.02 and eq.metadata["steps"] == 10_000 and disp < 1e-4
    assert criterion(
        2,
        "curved-ambient extinction and stationary equator",
        ok,
        f"t_est={tr.termination.t_est:.5f} vs {exact:.5f} rel={rel:.2e} tol=2e-2; "
        f"equator steps={eq.metadata['steps']} displacement={disp:.1e} tol=1e-4 tangential vertex drift={drift:.1e}",
    )


def test_03_entropy_golden(criterion):
    rng = np.random.default_rng(3)
    rows, ok = [], True
    for R in (0.5, 1.0, 2.0):
        center = rng.uniform(-3, 3, 3)
        res = entropy(icosphere(4, R, center))
        t_rel = abs(res.argmax.t0 / (R * R / 4) - 1)
        ok &= abs(res.lam - oracles.FOUR_OVER_E) <= 1e-2 and t_rel <= 0.05
        rows.append(f"R={R}: lam={res.lam:.5f} t0 rel err={t_rel:.1e}")
    assert criterion(3, "entropy of round spheres", ok, "; ".join(rows) + f"; 4/e={oracles.FOUR_OVER_E:.5f}")


def test_04_huisken(sphere_traj, criterion):
    te = sphere_traj.termination.t_est
    grid = [(np.array([a, 0, 0]), s) for a in (0, 0.25, 0.5, 1.0, 1.5) for s in (te, 0.1, 0.2, 0.5, 1.0)]
    r = verify_huisken(sphere_traj, grid)
    ok = len(grid) == 25 and r.passed and r.extra["dissipation_ok"]
    assert criterion(
        4,
        "Huisken monotonicity",
        ok,
        f"worst increment={r.worst_violation:.1e} tol={r.tolerance:.2e}; "
        f"dissipation gap={r.extra['dissipation_gap']:.2e} tol={r.extra['dissipation_tolerance']:.2e}",
    )


def test_05_weighted_monotonicity(s3_traj, s3_big, criterion):
    K = s3_big.curvature_bound_K()
    y_s = (s3_traj.termination.point, s3_traj.termination.t_est)
    j = verify_J_monotone(s3_traj, y_s, K=K)
    bare = verify_J_monotone(s3_traj, y_s, K=0.0)
    ok = math.isclose(K, 0.2) and j.passed and bare.worst_violation > 0
    assert criterion(
        5,
        "weighted monotonicity",
        ok,
        f"K={K:.3f} J worst increment={j.worst_violation:.1e} tol={j.tolerance:.2e}; "
        f"unweighted largest increment={bare.worst_violation:.2e}",
    )


def test_06_almost_monotonicity(s3_traj, criterion):
    term = s3_traj.termination
    points = [
        (term.point, term.t_est),
        (term.point, term.t_est + 0.2),
        (np.array([0, 0, 0, 9.9]), 0.3),
        (np.array([0.5, 0, 0, 9.95]), 0.3),
    ]
    reps = [verify_almost_mono_u(s3_traj, p, C=2.0) for p in points]
    lam = verify_entropy_almost_mono(s3_traj, epsilon0=0.05)
    ok = all(r.passed for r in reps) and lam.passed
    worst_u = max(r.worst_violation for r in reps)
    assert criterion(
        6,
        "almost-monotonicity of u and of the entropy",
        ok,
        f"u worst={worst_u:.1e} tol=1e-3 over {len(points)} points; lambda worst={lam.worst_violation:.2e} "
        f"over {len(lam.series)} snapshots",
    )


def test_07_gradients_and_limits(criterion):
    rng = np.random.default_rng(7)
    meshes = [icosphere(3, 1.3), ellipsoid(3), torus(2.0, 0.8, 24, 12)]
    worst = 0.0
    for i in range(100):
        m = meshes[i % 3]
        box = search_box(m)
        x0 = rng.uniform(box["lo"], box["hi"])
        t0 = math.exp(rng.uniform(math.log(box["T1"]), math.log(box["T2"])))
        g = F_gradient(m, (x0, t0))
        hx, ht = 1e-5 * math.sqrt(t0), 1e-5 * t0
        fd = [(F_functional(m, (x0 + e, t0)) - F_functional(m, (x0 - e, t0))) / (2 * hx) for e in hx * np.eye(3)]
        fd.append((F_functional(m, (x0, t0 + ht)) - F_functional(m, (x0, t0 - ht))) / (2 * ht))
        exact = np.append(g.d_x0, g.d_t0)
        worst = max(worst, np.linalg.norm(exact - fd) / max(np.linalg.norm(exact), 1e-8))

    s = icosphere(4)
    lam = entropy(s).lam
    bound = -(lam / 4) * float((np.linalg.norm(s.mean_curvature, axis=1) ** 2).max())
    h2 = s.mean_edge_length**2
    low = min(
        F_gradient(s, ((x, 0.1, z), t0)).d_t0
        for x in np.linspace(-1.2, 1.2, 7)
        for z in np.linspace(-1.2, 1.2, 7)
        for t0 in np.geomspace(4 * h2, 4.0, 9)
    )
    limit = max(abs(F_functional(s, (v, 16 * h2)) - 1.0) for v in s.vertices[::7])
    ok = worst < 1e-4 and low >= 1.05 * bound and limit <= 0.05
    assert criterion(
        7,
        "F gradient and scale limits",
        ok,
        f"FD rel err={worst:.1e}; min dF/dt0={low:.3f} bound={bound:.3f}; |F-1| at 16h^2={limit:.3f}",
    )


def test_08_shrinker_detection(criterion):
    errs = [shrinker_residual(icosphere(s, 2.0), (np.zeros(3), 1.0)).l2 for s in (3, 4, 5)]
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    ell = ellipsoid(4)
    res = shrinker_residual(ell, entropy(ell).argmax).l2
    ok = min(orders) >= 1.8 and res > 0.1
    assert criterion(
        8,
        "shrinker residual",
        ok,
        f"sphere residuals={', '.join(f'{e:.2e}' for e in errs)} orders={', '.join(f'{o:.2f}' for o in orders)}; "
        f"ellipsoid residual={res:.3f}",
    )


def test_09_entropy_gap_and_continuity(criterion):
    catalog = {
        "icosphere": icosphere(4),
        "ellipsoid": ellipsoid(4),
        "torus": torus(),
        "geodesic_sphere_s3": geodesic_sphere_in_s3(1.0, 3),
        "clifford_torus": clifford_torus_mesh(),
    }
    lams = {k: entropy(m).lam for k, m in catalog.items()}
    base = ellipsoid(3)
    shift = np.array([1.0, -2.0, 0.5])
    dil = max(abs(entropy(base.with_vertices(c * base.vertices + shift)).lam - entropy(base).lam) for c in (0.5, 2.5))
    sph = icosphere(3)
    v = sph.vertices
    fam = [sph.with_vertices(v / np.sqrt((v**2 / np.array([1 + s, 1.0, 1.0]) ** 2).sum(1))[:, None]) for s in np.linspace(0, 1, 9)]
    probe = entropy_continuity_probe(fam, growth=1.5)
    ok = min(lams.values()) > 1.05 and dil < 1e-6 and probe.refinement_stable
    assert criterion(
        9,
        "entropy gap, invariance and continuity",
        ok,
        "; ".join(f"{k}={v:.4f}" for k, v in lams.items())
        + f"; dilation delta={dil:.1e}; Lipschitz fine={probe.lipschitz_estimate:.4f} coarse={probe.coarse_estimate:.4f}",
    )


def test_10_volume_bound(sphere_traj, s3_traj, criterion):
    rows, ok = [], True
    for name, traj in (("euclidean", sphere_traj), ("curved", s3_traj)):
        m0 = traj.meshes[0]
        off = m0.vertices.mean(0) + 0.3 * (m0.vertices[0] - m0.vertices.mean(0))
        centers = [m0.vertices.mean(0), m0.vertices[0], m0.vertices[len(m0.vertices) // 2], off]
        for T in (0.02, 0.1):
            r = volume_ratio_bound(traj, [0.1, 0.3, 0.6, 0.9], centers, S=1.0, T=T)
            ok &= r.passed and len(r.series) > 0
            rows.append(f"{name} T={T}: max ratio={max(v for _, v in r.series):.3f} bound={r.extra['bound']:.2f}")
    assert criterion(10, "volume ratio bound", ok, "; ".join(rows))


@pytest.mark.slow
def test_11_piecewise(criterion):
    budget = PiecewiseBudget()
    log = piecewise_flow(ellipsoid(4, (2.0, 1.0, 1.0)), None, lambda g: np.zeros_like(g.vertices), budget)
    bound = log.replacement_bound(budget)
    try:
        attempt_replacement(icosphere(3), np.zeros(3), 0.25, Euclidean(3), lambda g: 0.1 * g.normal_part(g.vertices), budget.epsilon)
        rejected = False
    except PerturbationRejected:
        rejected = True
    ok = log.final_classification == "RoundPoint" and not log.replacements and rejected and len(log.replacements) <= bound
    assert criterion(
        11,
        "piecewise flow orchestration",
        ok,
        f"verdict={log.final_classification} replacements={len(log.replacements)} bound={bound:.1f}; "
        f"dilation provider rejected={rejected}",
    )


def test_12_determinism(tmp_path, criterion):
    text = (
        "mesh: {kind: ellipsoid, subdivisions: 3, axes: [1.5, 1.0, 1.0]}\n"
        "functional_grid: {centers: [[0, 0, 0], [0.4, 0.1, 0]], t0: [0.1, 0.3]}\n"
        "verify: {almost_mono_u: {}, volume_ratio: {n_centers: 4}, entropy_almost_mono: {max_snapshots: 4}}\n"
    )
    csvs = {}
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        (d / "c.yaml").write_text(text)
        for cmd in ("flow", "entropy", "verify"):
            main([cmd, "--config", str(d / "c.yaml"), "--out", str(d / cmd), "--seed", "42"])
        csvs[run] = {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*.csv"))}
    same = csvs["a"].keys() == csvs["b"].keys() and all(csvs["a"][k] == csvs["b"][k] for k in csvs["a"])
    ok = same and len(csvs["a"]) >= 4
    assert criterion(12, "byte-identical CSVs under a fixed seed", ok, f"{len(csvs['a'])} CSV files compared")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
