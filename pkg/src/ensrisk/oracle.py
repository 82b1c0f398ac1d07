"""Independent numerical verification of the closed forms.

Expected scores, entropies, and divergences of Gaussian mixtures are
recomputed here straight from their defining integrals with an adaptive
Gauss-Kronrod scheme, plus a seeded Monte-Carlo estimator as a second,
stochastic route.  Nothing in this module reuses the closed-form mixture
expressions it is meant to check; the only shared code is the elementary
density/CDF evaluation.

The adaptive scheme bisects the interval carrying the largest error, where
the local error is estimated from the difference between the embedded
7-point Gauss and 15-point Kronrod rules.  The integration window is
[min_i(mu_i - w sigma_i), max_i(mu_i + w sigma_i)] with w = tail_width;
Gaussian tails beyond 8 sigma contribute less than 1e-15 to every integrand
used here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy import special

from .gaussians import GaussianComponent
from .scores import Distribution, ScoringRule, mixture_parameters, point_scores

_SQRT_2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Nodes and weights of the 15-point Kronrod extension of 7-point Gauss on
# [-1, 1] (the classic QUADPACK pair).  Nodes are symmetric about 0.
_K15_NODES = np.array([
    -0.991455371120813, -0.949107912342759, -0.864864423359769,
    -0.741531185599394, -0.586087235467691, -0.405845151377397,
    -0.207784955007898, 0.0,
    0.207784955007898, 0.405845151377397, 0.586087235467691,
    0.741531185599394, 0.864864423359769, 0.949107912342759,
    0.991455371120813,
])
_K15_WEIGHTS = np.array([
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298, 0.209482141084728,
    0.204432940075298, 0.190350578064785, 0.169004726639267,
    0.140653259715525, 0.104790010322250, 0.063092092629979,
    0.022935322010529,
])
# Gauss-7 lives on the odd Kronrod nodes (indices 1, 3, ..., 13).
_G7_WEIGHTS = np.array([
    0.129484966168870, 0.279705391489277, 0.381830050505119,
    0.417959183673469, 0.381830050505119, 0.279705391489277,
    0.129484966168870,
])


@dataclass(frozen=True)
class QuadratureConfig:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-9
    max_subdivisions: int = 2000
    tail_width: float = 10.0

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")
        if self.tail_width < 8.0:
            raise ValueError("tail_width must be >= 8")


@dataclass(frozen=True)
class McConfig:
    samples: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.samples < 1000:
            raise ValueError("samples must be >= 1000")
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must fit in an unsigned 64-bit integer")


class QuadResult(NamedTuple):
    value: float
    error: float


class McResult(NamedTuple):
    value: float
    standard_error: float


class ConvergenceError(RuntimeError):
    """Quadrature tolerance was not reached; carries the best estimate."""

    def __init__(self, best: float, error: float, message: str):
        super().__init__(message)
        self.best = best
        self.error = error


def _panel_estimates(f: Callable, lo: np.ndarray, hi: np.ndarray):
    """Kronrod value and Gauss/Kronrod error estimate for each panel."""
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    xs = mid[:, None] + half[:, None] * _K15_NODES[None, :]
    fx = f(xs.ravel()).reshape(xs.shape)
    k15 = half * (fx @ _K15_WEIGHTS)
    g7 = half * (fx[:, 1:14:2] @ _G7_WEIGHTS)
    # |K15 - G7| grossly overestimates the Kronrod error on smooth panels,
    # which only costs a few extra bisections; never sharpen it downward.
    return k15, np.abs(k15 - g7)


def adaptive_quadrature(f: Callable, lo: float, hi: float,
                        cfg: QuadratureConfig | None = None,
                        knots: tuple[float, ...] = ()) -> QuadResult:
    """Integrate a vectorized integrand over [lo, hi] to the configured
    tolerance, bisecting the worst panel until convergence.

    ``knots`` forces initial panel boundaries (use it for kinked
    integrands such as the raw CRPS pointwise form).
    """
    cfg = cfg or QuadratureConfig()
    pts = [lo, hi]
    pts.extend(k for k in knots if lo < k < hi)
    pts = sorted(set(pts))
    # Seed with enough uniform panels that no component can hide between nodes.
    edges = []
    n_init = max(2, math.ceil(24 / (len(pts) - 1)))
    for a, b in zip(pts[:-1], pts[1:]):
        edges.extend(np.linspace(a, b, n_init + 1)[:-1])
    edges.append(hi)
    edges = np.asarray(edges)
    lo_arr, hi_arr = edges[:-1], edges[1:]

    values, errors = _panel_estimates(f, lo_arr, hi_arr)
    splits = 0
    while True:
        total = float(values.sum())
        total_err = float(errors.sum())
        tol = max(cfg.abs_tol, cfg.rel_tol * abs(total))
        if total_err <= tol:
            return QuadResult(total, total_err)
        if splits >= cfg.max_subdivisions:
            raise ConvergenceError(
                total, total_err,
                f"quadrature error {total_err:.3e} above tolerance {tol:.3e} "
                f"after {splits} subdivisions",
            )
        # Bisect every panel whose error exceeds its fair share of the budget.
        worst = errors > max(tol / (2 * len(errors)), 1e-300)
        if not np.any(worst):
            worst = errors == errors.max()
        n_split = int(np.count_nonzero(worst))
        splits += n_split
        mids = 0.5 * (lo_arr[worst] + hi_arr[worst])
        new_lo = np.concatenate([lo_arr[~worst], lo_arr[worst], mids])
        new_hi = np.concatenate([hi_arr[~worst], mids, hi_arr[worst]])
        new_vals, new_errs = _panel_estimates(f, new_lo[-2 * n_split:],
                                              new_hi[-2 * n_split:])
        values = np.concatenate([values[~worst], new_vals])
        errors = np.concatenate([errors[~worst], new_errs])
        lo_arr, hi_arr = new_lo, new_hi


def _window(dists: tuple[Distribution, ...], width: float) -> tuple[float, float]:
    lo, hi = math.inf, -math.inf
    for d in dists:
        means, variances = mixture_parameters(d)
        sig = np.sqrt(variances)
        lo = min(lo, float(np.min(means - width * sig)))
        hi = max(hi, float(np.max(means + width * sig)))
    return lo, hi


def _density(dist: Distribution) -> Callable:
    means, variances = mixture_parameters(dist)
    inv_sig = 1.0 / np.sqrt(variances)

    def pdf(ts):
        z = (ts[:, None] - means[None, :]) * inv_sig[None, :]
        with np.errstate(under="ignore"):
            comp = _INV_SQRT_2PI * inv_sig[None, :] * np.exp(-0.5 * z * z)
        return comp.mean(axis=1)

    return pdf


def _cdf(dist: Distribution) -> Callable:
    means, variances = mixture_parameters(dist)
    inv_sig = 1.0 / np.sqrt(variances)

    def cdf(ts):
        z = (ts[:, None] - means[None, :]) * inv_sig[None, :]
        return (0.5 * special.erfc(-z / _SQRT_2)).mean(axis=1)

    return cdf


def _log_density(dist: Distribution) -> Callable:
    """Exact log-density via logsumexp; immune to the underflow that makes
    log(density) bottom out at log(1e-300) far from the mixture."""
    means, variances = mixture_parameters(dist)
    log_norm = -0.5 * (math.log(2.0 * math.pi) + np.log(variances))
    log_m = math.log(len(means))

    def logpdf(ts):
        z2 = (ts[:, None] - means[None, :]) ** 2 / variances[None, :]
        return special.logsumexp(log_norm[None, :] - 0.5 * z2, axis=1) - log_m

    return logpdf


def _mean_of(dist: Distribution, cfg: QuadratureConfig) -> float:
    lo, hi = _window((dist,), cfg.tail_width)
    pdf = _density(dist)
    return adaptive_quadrature(lambda t: t * pdf(t), lo, hi, cfg).value


def oracle_entropy(rule: ScoringRule, p: Distribution,
                   cfg: QuadratureConfig | None = None) -> float:
    """H(P) recomputed from the defining integral.

    CRPS uses H(P) = integral F (1 - F) dt, which equals (1/2) E|X - X'|;
    LOG is the Shannon entropy -integral p log p (this is the value the
    estimator registry requests for its quadrature-required cells); QUAD is
    -integral p^2; SE integrates the centered second moment.
    """
    cfg = cfg or QuadratureConfig()
    lo, hi = _window((p,), cfg.tail_width)
    if rule is ScoringRule.CRPS:
        cdf = _cdf(p)
        return adaptive_quadrature(lambda t: cdf(t) * (1.0 - cdf(t)), lo, hi, cfg).value
    if rule is ScoringRule.LOG:
        logpdf = _log_density(p)

        def integrand(t):
            lp = logpdf(t)
            with np.errstate(under="ignore"):
                dens = np.exp(lp)
            # 0 * log 0 := 0 falls out on its own: exp underflows first
            return -dens * lp

        return adaptive_quadrature(integrand, lo, hi, cfg).value
    if rule is ScoringRule.QUADRATIC:
        pdf = _density(p)
        return -adaptive_quadrature(lambda t: pdf(t) ** 2, lo, hi, cfg).value
    if rule is ScoringRule.SE:
        pdf = _density(p)
        mean = _mean_of(p, cfg)
        return adaptive_quadrature(lambda t: (t - mean) ** 2 * pdf(t), lo, hi, cfg).value
    raise ValueError(f"unknown rule {rule!r}")


def oracle_expected_score(rule: ScoringRule, pred: Distribution,
                          label: Distribution,
                          cfg: QuadratureConfig | None = None) -> QuadResult:
    """S(pred, label) by numerical integration of the defining expectation.

    The CRPS route goes through d(P, Q) = integral (F_P - F_Q)^2 dt plus the
    label entropy, avoiding the kinked pointwise integrand entirely.
    """
    cfg = cfg or QuadratureConfig()
    lo, hi = _window((pred, label), cfg.tail_width)

    if rule is ScoringRule.CRPS:
        f_p, f_q = _cdf(pred), _cdf(label)
        div = adaptive_quadrature(lambda t: (f_p(t) - f_q(t)) ** 2, lo, hi, cfg)
        ent = adaptive_quadrature(lambda t: f_q(t) * (1.0 - f_q(t)), lo, hi, cfg)
        return QuadResult(div.value + ent.value, div.error + ent.error)

    q_pdf = _density(label)

    if rule is ScoringRule.LOG:
        p_logpdf = _log_density(pred)

        def integrand(t):
            return -q_pdf(t) * p_logpdf(t)

        res = adaptive_quadrature(integrand, lo, hi, cfg)
        return QuadResult(res.value, res.error)

    if rule is ScoringRule.QUADRATIC:
        p_pdf = _density(pred)
        norm = adaptive_quadrature(lambda t: p_pdf(t) ** 2, lo, hi, cfg)
        cross = adaptive_quadrature(lambda t: p_pdf(t) * q_pdf(t), lo, hi, cfg)
        return QuadResult(-2.0 * cross.value + norm.value,
                          2.0 * cross.error + norm.error)

    if rule is ScoringRule.SE:
        pred_mean = _mean_of(pred, cfg)
        res = adaptive_quadrature(lambda t: (t - pred_mean) ** 2 * q_pdf(t),
                                  lo, hi, cfg)
        return QuadResult(res.value, res.error)

    raise ValueError(f"unknown rule {rule!r}")


def oracle_divergence(rule: ScoringRule, pred: Distribution,
                      label: Distribution,
                      cfg: QuadratureConfig | None = None) -> float:
    """d(pred, label) = S(pred, label) - H(label), both sides by quadrature."""
    cfg = cfg or QuadratureConfig()
    if rule is ScoringRule.CRPS:
        lo, hi = _window((pred, label), cfg.tail_width)
        f_p, f_q = _cdf(pred), _cdf(label)
        return adaptive_quadrature(lambda t: (f_p(t) - f_q(t)) ** 2, lo, hi, cfg).value
    score = oracle_expected_score(rule, pred, label, cfg).value
    return score - oracle_entropy(rule, label, cfg)


def _sample_mixture(dist: Distribution, n: int, rng: np.random.Generator) -> np.ndarray:
    means, variances = mixture_parameters(dist)
    idx = rng.integers(0, len(means), size=n)
    return means[idx] + np.sqrt(variances[idx]) * rng.standard_normal(n)


def mc_expected_score(rule: ScoringRule, pred: Distribution, label: Distribution,
                      cfg: McConfig | None = None) -> McResult:
    """Monte-Carlo estimate of S(pred, label), deterministic given the seed.

    Only the label is sampled; the pointwise score of the (possibly mixture)
    prediction is evaluated in closed form, so no sampling noise enters on
    the prediction side.
    """
    cfg = cfg or McConfig()
    rng = np.random.default_rng(cfg.seed)
    ys = _sample_mixture(label, cfg.samples, rng)
    scores = point_scores(rule, pred, ys)
    value = float(np.mean(scores))
    stderr = float(np.std(scores, ddof=1) / math.sqrt(cfg.samples))
    return McResult(value, stderr)


def crps_point_quadrature(pred: Distribution, y: float,
                          cfg: QuadratureConfig | None = None) -> float:
    """CRPS(pred, y) from the raw integral, with a knot at the kink."""
    cfg = cfg or QuadratureConfig()
    lo, hi = _window((pred, GaussianComponent(y, 1.0)), cfg.tail_width)
    f_p = _cdf(pred)

    def integrand(t):
        return (f_p(t) - (y <= t)) ** 2

    return adaptive_quadrature(integrand, lo, hi, cfg, knots=(y,)).value
