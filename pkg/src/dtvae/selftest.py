"""Dense-oracle checks of the factored algebra, runnable from the CLI."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import dyadic, gaussian, linalg
from .dyadic import DyadicTransform
from .gaussian import DiagGaussian

SWEEP_EPSILONS = (1e-2, 1e-3, 1e-4)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def random_transform(rng: np.random.Generator, n: int, k: int, eps: float) -> DyadicTransform:
    return DyadicTransform(eps, rng.standard_normal((n, k)), rng.standard_normal((k, n)))


def random_pd_transform(rng: np.random.Generator, n: int, k: int, eps: float) -> DyadicTransform:
    """Random transform redrawn until det(B) > 0, as kl_dt requires."""
    while True:
        b = random_transform(rng, n, k, eps)
        if dyadic.logdet(b)[0] == 1:
            return b


def random_posterior(rng: np.random.Generator, n: int) -> DiagGaussian:
    return DiagGaussian(rng.standard_normal(n), rng.uniform(-1.5, 1.5, n))


def sylvester_gap(b: DyadicTransform) -> tuple[bool, float]:
    """(signs agree, |log|det| difference|) between factored and dense routes."""
    s_fac, l_fac = dyadic.logdet(b)
    s_den, l_den = linalg.lu_logdet(dyadic.densify(b))
    if s_fac != s_den:
        return False, math.inf
    if s_fac == 0:
        return True, 0.0
    return True, abs(l_fac - l_den)


def first_order_slopes(b_unit: DyadicTransform, epsilons=SWEEP_EPSILONS):
    """Log-log slopes of the det and inverse gaps over an eps sweep."""
    det_gaps, inv_gaps = [], []
    for eps in epsilons:
        d, i = dyadic.first_order_diagnostics(DyadicTransform(eps, b_unit.u, b_unit.v))
        det_gaps.append(d)
        inv_gaps.append(i)
    le = np.log(epsilons)
    det_slope = np.polyfit(le, np.log(det_gaps), 1)[0]
    inv_slope = np.polyfit(le, np.log(inv_gaps), 1)[0]
    return float(det_slope), float(inv_slope), det_gaps, inv_gaps


def mc_kl(g: DiagGaussian, b: DyadicTransform, samples: int, rng: np.random.Generator):
    """Monte-Carlo ``E_q[log q(z) - log p(z)]`` and its standard error."""
    n = g.n
    bd = dyadic.densify(b)
    mean = bd @ g.mu
    cov = bd @ np.diag(g.var) @ bd.T
    alpha = rng.standard_normal((samples, n))
    z = (g.mu + alpha * g.std) @ bd.T
    prec = linalg.dense_inverse(cov)
    _, logdet_cov = linalg.lu_logdet(cov)
    d = z - mean
    log_q = -0.5 * np.einsum("si,ij,sj->s", d, prec, d) - 0.5 * (logdet_cov + n * math.log(2 * math.pi))
    log_p = -0.5 * np.sum(z * z, axis=1) - 0.5 * n * math.log(2 * math.pi)
    diff = log_q - log_p
    return float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(samples))


def check_woodbury(seed: int = 0, instances: int = 200) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    used = 0
    for _ in range(instances):
        b = random_transform(rng, int(rng.integers(8, 65)), int(rng.integers(1, 9)),
                             float(rng.choice([1e-3, 0.1, 1.0])))
        sign, logabs = linalg.lu_logdet(dyadic.capacitance(b))
        if sign == 0 or logabs <= math.log(1e-8):
            continue
        y = rng.standard_normal(b.n)
        err = np.max(np.abs(dyadic.apply_inverse(b, dyadic.apply(b, y)) - y)) / (1 + np.max(np.abs(y)))
        worst = max(worst, err)
        used += 1
    return CheckResult("woodbury round trip", worst <= 1e-10, f"worst scaled error {worst:.2e} over {used}")


def check_sylvester(seed: int = 1, instances: int = 200) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    ok = True
    for _ in range(instances):
        b = random_transform(rng, int(rng.integers(8, 65)), int(rng.integers(1, 9)),
                             float(rng.choice([1e-3, 0.1, 1.0])))
        agree, gap = sylvester_gap(b)
        ok &= agree
        worst = max(worst, gap)
    return CheckResult("sylvester log-det", ok and worst <= 1e-9, f"worst |dlogdet| {worst:.2e}, signs agree={ok}")


def check_kl_dense(seed: int = 2, instances: int = 100) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(2, 33))
        b = random_pd_transform(rng, n, int(rng.integers(1, min(n, 8) + 1)), float(rng.uniform(0, 0.1)))
        g = random_posterior(rng, n)
        bd = dyadic.densify(b)
        ref = gaussian.kl_dense_oracle(bd @ g.mu, bd @ np.diag(g.var) @ bd.T, np.zeros(n), np.eye(n))
        worst = max(worst, abs(gaussian.kl_dt(g, b) - ref) / max(abs(ref), 1e-300))
    return CheckResult("kl vs dense oracle", worst <= 1e-9, f"worst relative error {worst:.2e}")


def check_kl_monte_carlo(seed: int = 3, samples: int = 1_000_000) -> CheckResult:
    rng = np.random.default_rng(seed)
    b = random_pd_transform(rng, 4, 2, 0.3)
    g = random_posterior(rng, 4)
    est, se = mc_kl(g, b, samples, rng)
    exact = gaussian.kl_dt(g, b)
    z = abs(est - exact) / se
    return CheckResult("kl vs monte carlo", z <= 3.0, f"exact {exact:.5f}, mc {est:.5f} +- {se:.5f} ({z:.2f} SE)")


def check_first_order(seed: int = 4) -> CheckResult:
    rng = np.random.default_rng(seed)
    det_slope, inv_slope, _, _ = first_order_slopes(random_transform(rng, 8, 2, 1.0))
    ok = abs(det_slope - 2) <= 0.2 and abs(inv_slope - 2) <= 0.2
    return CheckResult("first-order eps slopes", ok, f"det slope {det_slope:.3f}, inverse slope {inv_slope:.3f}")


def check_non_pd_path() -> CheckResult:
    # eps = 10 with this dyad gives B = diag(-9, 1)
    b = DyadicTransform(10.0, np.array([[1.0], [0.0]]), np.array([[-1.0, 0.0]]))
    g = DiagGaussian(np.zeros(2), np.zeros(2))
    try:
        gaussian.kl_dt(g, b)
    except gaussian.NonPDPosteriorError as exc:
        return CheckResult("non-PD posterior rejected", True, str(exc))
    return CheckResult("non-PD posterior rejected", False, "kl_dt accepted det(B) < 0")


ALL_CHECKS = (check_woodbury, check_sylvester, check_kl_dense, check_kl_monte_carlo,
              check_first_order, check_non_pd_path)


def run_all() -> tuple[list[CheckResult], float]:
    t0 = time.perf_counter()
    results = [check() for check in ALL_CHECKS]
    return results, time.perf_counter() - t0
