"""Acceptance criteria 1-10. Each test records one PASS/FAIL line, printed after the run."""

import filecmp
import itertools
import json
import math
import time

import jax
import jax.numpy as jnp
import numpy as np
import pytest
from scipy.optimize import minimize

from conftest import ACCEPTANCE
from koopman_mfg import cli, koopman, mfg, pipeline
from koopman_mfg import config as cfgmod
from koopman_mfg.connectivity import BrainGraph, analytic_phase, plv_from_phases, plv_matrix, state_cost
from koopman_mfg.diffnet import forward, grad_input, hessian_trace, init_mlp, scalar_apply
from koopman_mfg.graphsel import weighted_betweenness
from koopman_mfg.koopman import KoopmanModel, fit_readout, fit_transition, spectral_radius, stabilize

# frozen on the default benchmark (seed 0); tolerance covers BLAS/platform drift
FIDELITY_W1 = 0.013701
FIDELITY_ONE_STEP_RMSE = 0.064268


def record(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def test_criterion_01_plv_identities():
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    x = rng.standard_normal(512)
    ident = abs(plv_matrix(np.vstack([x, x]))[0, 1] - 1.0)
    m, k = 1024, 40
    s = np.arange(m)
    w = 2 * np.pi * k / m
    offsets = np.vstack([np.cos(w * s), 3.0 * np.sin(w * s), 0.2 * np.cos(w * s + 1.1)])
    offset_err = float(np.max(np.abs(plv_matrix(offsets, (m // 20, m - m // 20)) - 1.0)))
    trials, n_samples = 100, 1000
    vals = [plv_from_phases(rng.uniform(-np.pi, np.pi, (2, n_samples)))[0, 1] for _ in range(trials)]
    expect = math.sqrt(math.pi) / (2 * math.sqrt(n_samples))
    sigma = math.sqrt((4 - math.pi) / (4 * n_samples)) / math.sqrt(trials)
    z = abs(np.mean(vals) - expect) / sigma
    elapsed = time.perf_counter() - start
    ok = ident < 1e-9 and offset_err < 1e-6 and z < 3 and elapsed < 10
    record(1, ok, f"identical {ident:.1e}, offset {offset_err:.1e}, random mean {np.mean(vals):.4f} "
                  f"({z:.2f} sigma from {expect:.4f}), {elapsed:.1f}s")


def brute_betweenness(adj):
    """Enumerate every simple path; count shortest ones through each interior node."""
    n = adj.shape[0]
    nbrs = [np.flatnonzero(adj[i]) for i in range(n)]
    score = np.zeros(n)
    for s, t in itertools.combinations(range(n), 2):
        paths = []
        stack = [(s, [s], 0.0)]
        while stack:
            node, path, length = stack.pop()
            if node == t:
                paths.append((length, path))
                continue
            for nb in nbrs[node]:
                if nb not in path:
                    stack.append((nb, path + [nb], length + 1.0 / adj[node, nb]))
        if not paths:
            continue
        best = min(p[0] for p in paths)
        shortest = [p for length, p in paths if length <= best * (1 + 1e-12)]
        for p in shortest:
            for v in p[1:-1]:
                score[v] += 1.0 / len(shortest)
    return score


def test_criterion_02_graph_algebra():
    rng = np.random.default_rng(2)
    worst_row, min_eig, worst_bc = 0.0, np.inf, 0.0
    for _ in range(50):
        n = int(rng.integers(2, 9))
        w = np.triu(rng.uniform(0.05, 1.0, (n, n)) * (rng.random((n, n)) < 0.6), 1)
        g = BrainGraph.from_adjacency(w + w.T)
        worst_row = max(worst_row, float(np.max(np.abs(g.laplacian.sum(axis=1)))))
        min_eig = min(min_eig, float(np.min(np.linalg.eigvalsh(g.laplacian))))
        worst_bc = max(worst_bc, float(np.max(np.abs(weighted_betweenness(g.adjacency) - brute_betweenness(g.adjacency)))))
    dirichlet = state_cost(np.array([1.0, -1.0]), BrainGraph.from_adjacency([[0, 1], [1, 0]]))
    ok = worst_row < 1e-12 and min_eig >= -1e-10 and dirichlet == 18.0 and worst_bc < 1e-9
    record(2, ok, f"row sums {worst_row:.1e}, min eig {min_eig:.1e}, Dirichlet {dirichlet}, "
                  f"betweenness err {worst_bc:.1e} over 50 graphs")


def svd_ridge(x, y, lam):
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    return y @ vt.T @ np.diag(s / (s**2 + lam)) @ u.T


def test_criterion_03_ridge_closed_form():
    rng = np.random.default_rng(3)
    worst_fit, worst_grad = 0.0, 0.0
    for _ in range(20):
        n_res, m, n = int(rng.integers(3, 30)), int(rng.integers(50, 300)), int(rng.integers(1, 6))
        lam = float(10 ** rng.uniform(-4, 1))
        r_curr, r_next = rng.standard_normal((n_res, m)), rng.standard_normal((n_res, m))
        x = rng.standard_normal((n, m))
        k = fit_transition(r_curr, r_next, lam)
        w = fit_readout(r_curr, x, lam)
        worst_fit = max(worst_fit, np.linalg.norm(k - svd_ridge(r_curr, r_next, lam)),
                        np.linalg.norm(w - svd_ridge(r_curr, x, lam)))
        grad = 2 * (k @ r_curr - r_next) @ r_curr.T + 2 * lam * k
        scale = np.linalg.norm(2 * r_next @ r_curr.T)
        worst_grad = max(worst_grad, np.linalg.norm(grad) / scale)
    record(3, worst_fit < 1e-8 and worst_grad < 1e-6,
           f"max Frobenius gap {worst_fit:.1e}, max relative gradient {worst_grad:.1e}")


def test_criterion_04_spectral_safety():
    rng = np.random.default_rng(4)
    worst_rho, worst_idem, finite = 0.0, 0.0, True
    for i in range(100):
        n = int(rng.integers(2, 20))
        k = rng.standard_normal((n, n)) * rng.uniform(0.1, 3.0)
        safe = stabilize(k)
        worst_rho = max(worst_rho, spectral_radius(safe))
        worst_idem = max(worst_idem, float(np.max(np.abs(stabilize(safe) - safe))))
        if i < 20:
            z = rng.standard_normal(n)
            for _ in range(10_000):
                z = safe @ z
            finite &= bool(np.all(np.isfinite(z)))
    record(4, worst_rho <= 1 + 1e-9 and worst_idem <= 1e-12 and finite,
           f"max radius {worst_rho:.12f}, idempotence {worst_idem:.1e}, 10k-step rollouts finite: {finite}")


def test_criterion_05_derivative_stack():
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    worst_g, worst_h = 0.0, 0.0
    zscores = []
    for arch_seed, dims in enumerate([[3, 16, 1], [6, 32, 32, 1], [10, 24, 24, 24, 1]]):
        net = init_mlp(dims, arch_seed)
        params = net.jax_params()
        hess = jax.jit(jax.hessian(lambda x: scalar_apply(params, x)))
        d = dims[0]
        for i in range(100):
            x = rng.standard_normal(d)
            g = grad_input(net, x)
            eps = 1e-6
            fd = np.array([(forward(net, x + eps * e) - forward(net, x - eps * e)) / (2 * eps) for e in np.eye(d)])
            worst_g = max(worst_g, np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-8))
            h = 1e-5
            fd_tr = sum((grad_input(net, x + h * e)[j] - grad_input(net, x - h * e)[j]) / (2 * h)
                        for j, e in enumerate(np.eye(d)))
            exact = hessian_trace(net, x)
            worst_h = max(worst_h, abs(exact - fd_tr) / max(abs(exact), 1e-3))
            hm = np.asarray(hess(jnp.asarray(x)))
            # Rademacher quadratic forms: Var(v^T H v) = 2 (||H||_F^2 - sum H_ii^2)
            se = math.sqrt(max(2 * (np.sum(hm**2) - np.sum(np.diag(hm) ** 2)), 0.0) / 10_000)
            est = hessian_trace(net, x, "hutchinson", k=10_000, seed=1000 * arch_seed + i)
            gap = abs(est - exact)
            zscores.append(gap / se if se > 0 else (0.0 if gap < 1e-12 else np.inf))
    elapsed = time.perf_counter() - start
    # each point exceeds 3 SE with probability 0.27% even for an exact estimator, so the
    # check is calibrated: at most 1% of points outside 3 SE and unit-scale RMS error
    z = np.asarray(zscores)
    outside = int(np.sum(z >= 3))
    rms = float(np.sqrt(np.mean(z**2)))
    ok = worst_g < 1e-4 and worst_h < 1e-3 and outside <= 0.01 * z.size and 0.8 < rms < 1.25 and elapsed < 60
    record(5, ok, f"gradient rel err {worst_g:.1e}, trace rel err {worst_h:.1e}, Hutchinson {outside}/{z.size} "
                  f"points beyond 3 SE (max {z.max():.2f}, RMS {rms:.2f}), {elapsed:.1f}s")


def test_criterion_06_hamiltonian_identities():
    rng = np.random.default_rng(6)
    n, k = 5, 3
    m = rng.standard_normal((k, k))
    model = KoopmanModel.from_matrices(np.eye(n) + 0.2 * rng.standard_normal((n, n)), rng.standard_normal((n, k)),
                                       rng.standard_normal((2, n)), np.zeros((n, 4)))
    graph = BrainGraph.from_adjacency([[0, 0.4], [0.4, 0]])
    problem = mfg.LatentProblem.build(model, graph, mfg.MfgConfig(gamma=0.8, r=(m @ m.T + np.eye(k)).tolist()))
    worst_h, worst_s = 0.0, 0.0
    for _ in range(100):
        z, p = rng.standard_normal(n), rng.standard_normal(n)
        lag = lambda u: problem.gamma * u @ problem.r @ u + p @ problem.b @ u
        jac = lambda u: 2 * problem.gamma * problem.r @ u + problem.b.T @ p
        best = minimize(lag, rng.standard_normal(k), jac=jac, method="BFGS", options={"gtol": 1e-12})
        numeric = p @ problem.drift @ z + best.fun
        worst_h = max(worst_h, abs(mfg.hamiltonian(z, p, problem) - numeric))
        u = mfg.control_from_costate(p, problem)
        worst_s = max(worst_s, float(np.linalg.norm(2 * problem.gamma * problem.r @ u + problem.b.T @ p)))
    record(6, worst_h < 1e-6 and worst_s < 1e-8, f"Hamiltonian gap {worst_h:.1e}, stationarity {worst_s:.1e}")


def riccati_gains(a, b, q, qt, gamma, times, steps=4000):
    """Finite-horizon feedback -(1/gamma) B^T P(t) from backward RK4 on the Riccati ODE."""
    m = b @ b.T / gamma
    f = lambda p: a.T @ p + p @ a + q - p @ m @ p
    h = 1.0 / steps
    p = qt.copy()
    ps = [p]
    for _ in range(steps):
        k1 = f(p)
        k2 = f(p + h / 2 * k1)
        k3 = f(p + h / 2 * k2)
        k4 = f(p + h * k3)
        p = p + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        ps.append(p)
    ps = ps[::-1]
    return {t: -(1.0 / gamma) * b.T @ ps[int(round(t * steps))] for t in times}


def test_criterion_07_lqr_cross_check():
    start = time.perf_counter()
    a = np.array([[0.2, 0.5], [-0.3, -0.1]])
    b = np.array([[1.0], [0.5]])
    adj = np.array([[0, 0.5], [0.5, 0]])
    graph = BrainGraph.from_adjacency(adj)
    rng = np.random.default_rng(0)
    model = KoopmanModel.from_matrices(np.eye(2) + a, b, np.eye(2), rng.standard_normal((2, 400)),
                                       sigma=np.full(2, 0.1), adjacency=adj)
    config = mfg.MfgConfig(gamma=0.5, horizon=1.0, n_iter=5000, lr_value=1e-3, lr_generator=1e-3, real_weight=0.0,
                           hutchinson_k=0, terminal_weight=1.0, hidden=(64, 64))
    policy = mfg.train(model, graph, config)
    problem = policy.problem()
    times = [0.0, 0.25, 0.5, 0.75]
    oracle = riccati_gains(a, b, problem.latent_cost, problem.terminal, config.gamma, times)
    zs = rng.standard_normal((200, 2))
    errs = []
    for t in times:
        u = np.array([mfg.optimal_control(z, t, policy, problem) for z in zs])
        gain = np.linalg.lstsq(zs, u, rcond=None)[0].T
        errs.append(float(np.linalg.norm(gain - oracle[t]) / np.linalg.norm(oracle[t])))
    elapsed = time.perf_counter() - start
    record(7, max(errs) < 0.10 and elapsed < 300,
           "gain rel err " + ", ".join(f"t={t}: {e:.3f}" for t, e in zip(times, errs)) + f"; {elapsed:.0f}s")


@pytest.fixture(scope="module")
def benchmark_fit():
    cfg = cfgmod.load(env={})
    signals = pipeline.load_signals(cfg)
    _, graph = pipeline.build_graph(signals, cfg.connectivity.window, cfg.connectivity.threshold)
    _, control = pipeline.select(graph, cfg.graphsel.k, cfg.graphsel.weights)
    model = koopman.fit_koopman(signals, graph, control, cfg.koopman)
    return signals, model, cfg


def test_criterion_08_koopman_fidelity(benchmark_fit):
    signals, model, cfg = benchmark_fit
    pred = pipeline.fidelity(model, signals, cfg.run.control_window)
    rmse, pers = pred["one_step"]["rmse_global"], pred["persistence"]["rmse_global"]
    w1 = pred["one_step"]["w1_global"]
    regress = abs(w1 - FIDELITY_W1) <= 0.2 * FIDELITY_W1 and abs(rmse - FIDELITY_ONE_STEP_RMSE) <= 0.2 * FIDELITY_ONE_STEP_RMSE
    record(8, rmse < pers and w1 < 0.1 and regress,
           f"one-step RMSE {rmse:.4f} vs persistence {pers:.4f}; seizure W1 {w1:.4f} "
           f"(frozen {FIDELITY_W1:.4f} +-20%)")


def test_criterion_09_end_to_end_ordering(tmp_path):
    start = time.perf_counter()
    summary = pipeline.run_pipeline(cfgmod.load(env={}), tmp_path / "bench")
    elapsed = time.perf_counter() - start
    table = summary["table"]
    count = table["ordering"]["count"]
    ratio = table["mfg_variance_ratio"]
    smooth = table["mfg_control_smoothness"]
    w = {k: table[k]["w1_to_healthy"]["mean"] for k in ("mfg", "mpc", "uncontrolled")}
    ok = count >= 8 and ratio < 0.5 and smooth <= 0.2 and elapsed < 900
    record(9, ok, f"ordering {count}/10, W1 mfg {w['mfg']:.4f} mpc {w['mpc']:.4f} unc {w['uncontrolled']:.4f}, "
                  f"variance ratio {ratio:.3g}, smoothness {smooth:.3f}, {elapsed:.0f}s")


def test_criterion_10_determinism(tmp_path, small_config):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert cli.main(["run-pipeline", "--config", str(small_config), "--out", str(out)]) == 0
    names = sorted(p.name for p in outs[0].iterdir())
    same = names == sorted(p.name for p in outs[1].iterdir())
    differing = []
    for name in names:
        if name == "summary.json":
            a, b = (json.loads((o / name).read_text()) for o in outs)
            a.pop("timings"), b.pop("timings")
            if a != b:
                differing.append(name)
        elif not filecmp.cmp(outs[0] / name, outs[1] / name, shallow=False):
            differing.append(name)
    record(10, same and not differing, f"{len(names)} artifacts compared, differing: {differing or 'none'}")
