"""End-to-end acceptance criteria.

Each test records one PASS/FAIL line (collected and printed in the terminal
summary). Tolerances are the ones the criteria fix; the experiment settings
(learning rate, horizon, excitation) were chosen during development and are
explained in the decisions ledger.
"""
import time

import numpy as np
import pytest

from nativecritic import kernels as K
from nativecritic.cli import EXIT_OK, main
from nativecritic.control_problem import benchmark_problem, hamiltonian_residual
from nativecritic.critic import (Excitation, LearningConfig, output_error_field, pe_stats,
                                 projection_error_report, simulate)
from nativecritic.kernels import KernelSpec
from nativecritic.native_space import (CenterSet, HNElement, eval_grid, fill_distance, grammian,
                                       power_function, project, sup_power)
from nativecritic.rates import fit_loglog_slope, rate_sweep

BENCH = benchmark_problem()
BOX = ((-1.0, -1.0), (1.0, 1.0))
LEVELS = (5, 7, 9, 13, 17)
FAMILIES = [
    KernelSpec("gaussian", lengthscale=0.8),
    KernelSpec("exponential", lengthscale=1.3),
    KernelSpec("inverse_multiquadric", lengthscale=0.7, shape=1.2, beta=-1.5),
    KernelSpec("wendland", smoothness=0, support_radius=1.5),
    KernelSpec("wendland", smoothness=1, support_radius=1.5),
    KernelSpec("wendland", smoothness=2, support_radius=1.5),
    KernelSpec("sobolev_matern", smoothness=1.5, lengthscale=0.9),
    KernelSpec("sobolev_matern", smoothness=2.5, lengthscale=0.9),
    KernelSpec("sobolev_matern", smoothness=3.5, lengthscale=0.9),
]
FAMILY_IDS = [f"{k.family.value}-{k.smoothness:g}" for k in FAMILIES]


def test_c01_hjb_identity(verdict):
    t0 = time.perf_counter()
    X, _ = eval_grid(*BOX, 101)
    worst = max(abs(hamiltonian_residual(BENCH.sys, BENCH.cost, BENCH.policy, BENCH.value_grad(x), x))
                for x in X)
    secs = time.perf_counter() - t0
    verdict("C1 HJB identity", worst <= 1e-10 and secs < 1.0,
            f"max |residual| = {worst:.2e} on 101x101 (<= 1e-10), {secs:.2f} s (< 1 s)")


def test_c02_kernel_gradients(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    h = 1e-6
    worst = {}
    for spec, name in zip(FAMILIES, FAMILY_IDS):
        X = rng.uniform(-1, 1, (200, 2))
        Y = rng.uniform(-1, 1, (200, 2))
        w = 0.0
        for x, y in zip(X, Y):
            g = K.grad2(spec, x, y)
            fd = np.array([(K.eval(spec, x, y + h * e) - K.eval(spec, x, y - h * e)) / (2 * h)
                           for e in np.eye(2)])
            gn = np.linalg.norm(g)
            w = max(w, np.linalg.norm(g - fd) / gn if gn > 0 else np.linalg.norm(fd))
        worst[name] = w
    secs = time.perf_counter() - t0
    top = max(worst.values())
    verdict("C2 kernel gradients", top <= 1e-6 and secs < 1.0,
            f"worst relative FD error {top:.2e} over {len(FAMILIES)} kernels x 200 pairs, {secs:.2f} s")


def test_c03_power_function(verdict):
    rng = np.random.default_rng(3)
    X, _ = eval_grid(*BOX, 41)
    at_centers, minimum = 0.0, np.inf
    for spec in FAMILIES:
        for _ in range(10):
            cs = CenterSet(rng.uniform(-1, 1, (12, 2)), *BOX)
            gf = grammian(spec, cs)
            at_centers = max(at_centers, power_function(spec, cs, gf, cs.centers).max())
            minimum = min(minimum, power_function(spec, cs, gf, X).min())
    gauss = KernelSpec("gaussian", lengthscale=0.7)
    one = CenterSet([[0.2, -0.3]], *BOX)
    r2 = np.sum((X - one.centers[0]) ** 2, axis=1)
    closed = np.sqrt(1 - np.exp(-2 * r2 / 0.7 ** 2))
    single = np.max(np.abs(power_function(gauss, one, grammian(gauss, one), X) - closed))
    verdict("C3 power function", at_centers <= 1e-7 and minimum >= 0 and single <= 1e-10,
            f"max at centers {at_centers:.1e}, min {minimum:.1e}, single-center gap {single:.1e}")


def test_c04_power_rate(verdict):
    t0 = time.perf_counter()
    spec = KernelSpec("sobolev_matern", smoothness=2.5)
    pts = []
    for m in LEVELS:
        cs = CenterSet.grid(m, *BOX)
        pts.append((fill_distance(cs, 101), sup_power(spec, cs, grammian(spec, cs), 101).value))
    slope = fit_loglog_slope(pts)[0]
    secs = time.perf_counter() - t0
    verdict("C4 power rate", abs(slope - 1.5) <= 0.375 and secs < 30,
            f"slope {slope:.3f} (1.5 +/- 0.375), {secs:.1f} s")


# a = 50 with 1 ms resets to Sobol points; see the ledger for why N = 49 cannot
# reach 1e-3 in 60 s at this rate
C5_CFG = LearningConfig(a=50.0, dt=1e-3, horizon=60.0, sample_every=60000,
                        excitation=Excitation("probing+reset", reset_period=1e-3, seed=1,
                                              sampler="sobol"))


@pytest.mark.parametrize("m", [3, 5, 7], ids=["N9", "N25", "N49"])
def test_c05_manufactured_convergence(verdict, m):
    spec = KernelSpec("sobolev_matern", smoothness=2.5)
    cs = CenterSet.grid(m, *BOX)
    gf = grammian(spec, cs)
    w_true = np.random.default_rng(m).uniform(-1, 1, cs.n)
    t0 = time.perf_counter()
    log = simulate(C5_CFG, spec, cs, gf, BENCH.sys, BENCH.cost, BENCH.policy, (1.0, -1.0),
                   output=HNElement(w_true, cs))
    secs = time.perf_counter() - t0
    err = np.max(np.abs(log.w[-1] - w_true))
    verdict(f"C5 manufactured convergence N={cs.n}", err <= 1e-3 and secs < 60,
            f"||W(T) - W_true||_inf = {err:.2e} (<= 1e-3), {secs:.1f} s")


def test_c06_deadzone_lyapunov(verdict):
    spec = KernelSpec("sobolev_matern", smoothness=3.5, lengthscale=1.5)
    cs = CenterSet.grid(3, *BOX)
    gf = grammian(spec, cs)
    big = CenterSet.grid(5, *BOX)
    v = HNElement(np.random.default_rng(11).uniform(-1, 1, big.n), big)
    eps_box, _ = projection_error_report(spec, cs, gf, v, BENCH.sys, BENCH.policy, 101)
    a = 1.0
    cfg = LearningConfig(a=a, dt=1e-3, horizon=20.0, deadzone_eps=2 * eps_box, sample_every=1)
    log = simulate(cfg, spec, cs, gf, BENCH.sys, BENCH.cost, BENCH.policy, (0.5, -0.5), output=v)

    # eps_{N,max} must cover every visited state, not only the box
    lo = np.minimum(log.x.min(0), BOX[0])
    hi = np.maximum(log.x.max(0), BOX[1])
    X, _ = eval_grid(lo, hi, 101)
    Kcb = spec.matrix(cs.centers, big.centers)
    resid = v - project(spec, cs, gf, Kcb @ v.coeffs)
    eps_max = max(eps_box, float(output_error_field(spec, resid, BENCH.sys, BENCH.policy, X).max()))

    # 1/2 ||v - v_hat||_H^2 from Grammian algebra on the joint centers
    vv = v.coeffs @ spec.matrix(big.centers, big.centers) @ v.coeffs
    W = log.w
    lyap = 0.5 * (vv - 2 * W @ (Kcb @ v.coeffs) + np.einsum("ki,ij,kj->k", W, gf.gram, W))
    r = np.abs(log.residual[:-1])
    active = ~log.deadzone_active[:-1]
    excess = (np.diff(lyap) + a * r * (r - eps_max) * cfg.dt)[active]
    tail = active[int(0.8 * active.size):]
    ok = active.any() and excess.max() <= 1e-6 and not tail.any()
    verdict("C6 dead-zone Lyapunov decrease", ok,
            f"{active.sum()} active steps, max excess {excess.max():.2e} (<= 1e-6), "
            f"{tail.sum()} active in final 20%")


# One sweep per kernel shared by criteria 7 and 8.
def _sweep(spec, a, horizon):
    cfg = LearningConfig(a=a, dt=1e-3, horizon=horizon, sample_every=10 ** 9,
                         excitation=Excitation("probing+reset", reset_period=1e-3, sampler="sobol"))
    t0 = time.perf_counter()
    rep = rate_sweep(BENCH, spec, list(LEVELS), cfg, 101)
    return rep, time.perf_counter() - t0


@pytest.fixture(scope="module")
def matern_sweep():
    return _sweep(KernelSpec("sobolev_matern", smoothness=2.5, lengthscale=0.9), 20.0, 1200.0)


@pytest.fixture(scope="module")
def exponential_sweep():
    # RK4 stability on the 17 x 17 grid caps the rate near a = 6.8
    return _sweep(KernelSpec("exponential", lengthscale=1.0), 5.0, 300.0)


def test_c07_value_rate_matern(verdict, matern_sweep):
    rep, secs = matern_sweep
    errs = [lv.linf_value_error for lv in rep.levels]
    decreasing = all(lv.ok for lv in rep.levels) and all(np.diff(errs) < 0)
    slope = rep.slope_value
    ok = decreasing and slope is not None and abs(slope - 1.5) <= 0.75
    verdict("C7 value rate (Matern 2.5)", ok,
            "errors " + ", ".join(f"{e:.3g}" for e in errs) + f"; slope {slope:.3f} (1.5 +/- 0.75), {secs:.0f} s")


def test_c07_value_rate_exponential(verdict, matern_sweep, exponential_sweep):
    rep, secs = exponential_sweep
    errs = np.array([lv.linf_value_error for lv in rep.levels])
    gains = errs[:-1] / errs[1:]
    total = matern_sweep[1] + secs
    ok = (all(lv.ok for lv in rep.levels) and np.all(gains > 1) and np.all(np.diff(gains) > 0)
          and total < 300)
    verdict("C7 super-polynomial decay (exponential)", ok,
            "errors " + ", ".join(f"{e:.3g}" for e in errs)
            + "; refinement gains " + ", ".join(f"{g:.2f}" for g in gains)
            + f"; both sweeps {total:.0f} s (< 300 s)")


def test_c08_control_rate(verdict, matern_sweep):
    rep, _ = matern_sweep
    diff = abs(rep.slope_control - rep.slope_value)
    verdict("C8 control rate", diff <= 0.5,
            f"control slope {rep.slope_control:.3f} vs value slope {rep.slope_value:.3f} (|diff| {diff:.3f} <= 0.5)")


# default run: Matern 2.5 on the 5 x 5 grid, a = 10, probing, 10 s, 1 s stride
GAMMA1 = [1.60966387e-10, 1.07885868e-11, 8.29182247e-14, 8.67288549e-13, 2.96845299e-13,
          1.19087314e-13, 5.70020510e-13, 8.11199844e-13, 2.63440470e-13]
GAMMA2 = [2.60773887, 2.7560222, 2.26392284, 3.17675294, 3.39901046, 2.16034166, 3.29365338,
          3.59641977, 2.61588175]


def test_c09_pe_diagnostics(verdict):
    spec = KernelSpec("sobolev_matern", smoothness=2.5)
    cs = CenterSet.grid(5, *BOX)
    gf = grammian(spec, cs)
    log = simulate(LearningConfig(horizon=10.0), spec, cs, gf, BENCH.sys, BENCH.cost,
                   BENCH.policy, (1.0, -1.0))
    stats = pe_stats(log, gf, 2.0)
    g1 = np.array([s.gamma1 for s in stats])
    g2 = np.array([s.gamma2 for s in stats])
    rng = np.random.default_rng(9)
    sandwich = True
    for s in stats:
        for c in rng.normal(size=(100, cs.n)):
            q = (c @ s.M @ c) / (c @ gf.gram @ c)
            sandwich &= s.gamma1 * (1 - 1e-9) - 1e-15 <= q <= s.gamma2 * (1 + 1e-9)
    # gamma1 sits a few hundred ulps of gamma2 above zero, so its fixture is loose
    fixtures = (np.allclose(g1, GAMMA1, rtol=0.05, atol=0)
                and np.allclose(g2, GAMMA2, rtol=1e-7, atol=0))
    ok = len(stats) == 9 and np.all(g1 > 0) and sandwich and fixtures
    verdict("C9 PE diagnostics", ok,
            f"{len(stats)} windows, min gamma1 {g1.min():.2e} > 0, gamma2 in "
            f"[{g2.min():.3f}, {g2.max():.3f}], sandwich {'holds' if sandwich else 'violated'}, "
            f"fixtures {'match' if fixtures else 'differ'}")


C10_CONFIG = """
[critic]
a = 5
horizon = 2
sample_every = 10
[domain]
resolution = 21
[centers]
grid = 3
[rates]
levels = 3, 5, 7
[pe]
window = 1
[excitation]
kind = probing+reset
reset_period = 0.3
seed = 4
"""


def test_c10_determinism(verdict, tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(C10_CONFIG)
    mismatched, compared = [], 0
    for command in ("simulate", "rates", "power", "pe"):
        dirs = [tmp_path / f"{command}_{i}" for i in (0, 1)]
        for d in dirs:
            assert main([command, "--config", str(cfg), "--out-dir", str(d), "--quiet"]) == EXIT_OK
        for p in sorted(dirs[0].glob("*.csv")):
            compared += 1
            if p.read_bytes() != (dirs[1] / p.name).read_bytes():
                mismatched.append(f"{command}/{p.name}")
    verdict("C10 determinism", compared >= 4 and not mismatched,
            f"{compared} CSV files compared across 4 commands, mismatches: {mismatched or 'none'}")
