"""The risk-estimator registry: every Bayes, excess, and total risk cell.

Estimator naming follows the experiment tables: approximation 1 averages the
risk over ensemble members (Bayesian averaging, BA), 2 plugs in the full
mixture (ENS), 3a plugs in the moment-matched surrogate (MM), and 3b the
averaged-variance surrogate (AV).  A total or excess estimator carries a
pair (alpha, beta): alpha is the prediction-side approximation, beta the
label-side one, and divergences are evaluated as d(approx_alpha,
approx_beta) with the prediction in the first slot.

Total risk composes as Tot(alpha, beta) = Bayes(alpha) + Exc(alpha, beta).
This is the composition under which the SE-score coincidences hold:
Tot(3b,2) collapses onto Bayes(3b), Tot(3b,1) onto Bayes(3a), and Tot(1,1),
Tot(2,1), Tot(3a,1) agree exactly (see the identity tests).

Cells with no closed form (anything that needs the Shannon entropy of a
mixture under the LOG rule) are flagged QuadratureRequired and can be filled
from the oracle module; the SE cells Exc(3a,2) and Exc(3b,2) are identically
zero because both surrogates share the mixture mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .gaussians import GaussianEnsemble
from .scores import (
    NOT_CLOSED_FORM,
    ScoringRule,
    pairwise_abs_moment,
    pairwise_overlap,
    abs_moment,
    gaussian_overlap,
)

_SQRT_PI = math.sqrt(math.pi)
_LOG_2PI = math.log(2.0 * math.pi)


class ApproximationId(Enum):
    """How a risk slot is approximated from the ensemble."""

    BA = "1"       # Bayesian averaging over members
    ENS = "2"      # posterior predictive mixture
    MM = "3a"      # moment-matched Gaussian surrogate
    AV = "3b"      # averaged-variance Gaussian surrogate


class RiskKind(Enum):
    TOTAL = "tot"
    BAYES = "bayes"
    EXCESS = "exc"


# The pairs the experiments use; (BA, ENS) is additionally accepted by
# excess_risk for the identity checks but is not a registry cell.
SUPPORTED_PAIRS = (
    (ApproximationId.BA, ApproximationId.BA),
    (ApproximationId.ENS, ApproximationId.BA),
    (ApproximationId.MM, ApproximationId.BA),
    (ApproximationId.AV, ApproximationId.BA),
    (ApproximationId.MM, ApproximationId.ENS),
    (ApproximationId.AV, ApproximationId.ENS),
)


@dataclass(frozen=True)
class EstimatorId:
    """One cell of the risk matrix: kind plus its approximation indices."""

    kind: RiskKind
    first: ApproximationId
    second: Optional[ApproximationId] = None

    def __post_init__(self):
        if self.kind is RiskKind.BAYES:
            if self.second is not None:
                raise ValueError("Bayes estimators carry a single index")
        else:
            if (self.first, self.second) not in SUPPORTED_PAIRS:
                raise ValueError(
                    f"unsupported pair ({self.first}, {self.second}); "
                    f"supported: {[(a.value, b.value) for a, b in SUPPORTED_PAIRS]}"
                )

    @property
    def label(self) -> str:
        if self.kind is RiskKind.BAYES:
            return f"Bayes({self.first.value})"
        name = "Tot" if self.kind is RiskKind.TOTAL else "Exc"
        return f"{name}({self.first.value},{self.second.value})"

    @property
    def key(self) -> str:
        """Machine name, e.g. tot_3a_2 / bayes_1 / exc_1_1."""
        if self.kind is RiskKind.BAYES:
            return f"bayes_{self.first.value}"
        return f"{self.kind.value}_{self.first.value}_{self.second.value}"

    @classmethod
    def parse(cls, key: str) -> "EstimatorId":
        parts = key.strip().lower().split("_")
        by_label = {a.value: a for a in ApproximationId}
        try:
            if parts[0] == "bayes" and len(parts) == 2:
                return cls(RiskKind.BAYES, by_label[parts[1]])
            if parts[0] in ("tot", "exc") and len(parts) == 3:
                kind = RiskKind.TOTAL if parts[0] == "tot" else RiskKind.EXCESS
                return cls(kind, by_label[parts[1]], by_label[parts[2]])
        except (KeyError, ValueError) as exc:
            raise ValueError(f"cannot parse estimator key {key!r}") from exc
        raise ValueError(f"cannot parse estimator key {key!r}")


def default_estimators() -> tuple[EstimatorId, ...]:
    """The 16 columns of the experiment tables, in table order."""
    tot = [EstimatorId(RiskKind.TOTAL, a, b) for a, b in SUPPORTED_PAIRS]
    bay = [EstimatorId(RiskKind.BAYES, a) for a in ApproximationId]
    exc = [EstimatorId(RiskKind.EXCESS, a, b) for a, b in SUPPORTED_PAIRS]
    return tuple(tot + bay + exc)


class Availability(Enum):
    CLOSED_FORM = "closed"
    QUADRATURE_REQUIRED = "quadrature"
    IDENTICALLY_ZERO = "zero"


_LOG_QUAD_KEYS = frozenset({
    "bayes_2", "exc_2_1", "exc_3a_2", "exc_3b_2",
    "tot_2_1", "tot_3a_2", "tot_3b_2",
})


def availability(rule: ScoringRule, est: EstimatorId) -> Availability:
    """Deterministic closed-form/quadrature/zero flag for one cell."""
    if rule is ScoringRule.SE and est.kind is RiskKind.EXCESS \
            and est.second is ApproximationId.ENS:
        return Availability.IDENTICALLY_ZERO
    if rule is ScoringRule.LOG and est.key in _LOG_QUAD_KEYS:
        return Availability.QUADRATURE_REQUIRED
    return Availability.CLOSED_FORM


class NotClosedFormRequested(ValueError):
    """A batch evaluation asked for a cell that has no closed form."""


class EnsembleBatch:
    """Closed-form estimator evaluation over a stack of ensembles.

    ``means`` and ``variances`` have shape (n, M); every estimator comes
    back as an (n,) array.  Pairwise reductions (the O(M^2) sums behind the
    CRPS and quadratic mixtures) are computed once and cached, which is what
    makes the 1e5-replicate shift experiments affordable.
    """

    def __init__(self, means, variances):
        means = np.asarray(means, dtype=float)
        variances = np.asarray(variances, dtype=float)
        if means.ndim != 2 or means.shape != variances.shape:
            raise ValueError("means and variances must be (n, M) arrays of equal shape")
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(variances))):
            raise ValueError("ensemble parameters must be finite")
        if np.any(variances <= 0.0):
            raise ValueError("variances must be > 0")
        self.means = means
        self.variances = variances
        self.sigmas = np.sqrt(variances)
        self.mu_star = means.mean(axis=1)
        self.pop_var = ((means - self.mu_star[:, None]) ** 2).mean(axis=1)
        self.var_av = variances.mean(axis=1)
        self.var_mm = self.var_av + self.pop_var
        self._crps_pair_mean = None
        self._quad_pair_mean = None

    @property
    def size(self) -> int:
        return self.means.shape[1]

    def crps_pair_mean(self) -> np.ndarray:
        """mean_ij A(mu_i - mu_j, sqrt(var_i + var_j)) = E|X - X'|."""
        if self._crps_pair_mean is None:
            a = pairwise_abs_moment(self.means, self.variances)
            self._crps_pair_mean = a.mean(axis=(1, 2))
        return self._crps_pair_mean

    def quad_pair_mean(self) -> np.ndarray:
        """mean_ij N(mu_i | mu_j, var_i + var_j) = integral p_ens^2."""
        if self._quad_pair_mean is None:
            n = pairwise_overlap(self.means, self.variances)
            self._quad_pair_mean = n.mean(axis=(1, 2))
        return self._quad_pair_mean

    def _surrogate(self, approx: ApproximationId) -> tuple[np.ndarray, np.ndarray]:
        if approx is ApproximationId.MM:
            return self.mu_star, self.var_mm
        if approx is ApproximationId.AV:
            return self.mu_star, self.var_av
        raise ValueError(f"not a surrogate: {approx}")

    # -- Bayes risks ---------------------------------------------------------

    def bayes(self, rule: ScoringRule, approx: ApproximationId) -> np.ndarray:
        if rule is ScoringRule.CRPS:
            if approx is ApproximationId.BA:
                return self.sigmas.mean(axis=1) / _SQRT_PI
            if approx is ApproximationId.ENS:
                return 0.5 * self.crps_pair_mean()
            return np.sqrt(self._surrogate(approx)[1]) / _SQRT_PI
        if rule is ScoringRule.LOG:
            if approx is ApproximationId.BA:
                return 0.5 * (_LOG_2PI + 1.0 + np.log(self.variances)).mean(axis=1)
            if approx is ApproximationId.ENS:
                raise NotClosedFormRequested("LOG Bayes(2) has no closed form")
            return 0.5 * (_LOG_2PI + 1.0 + np.log(self._surrogate(approx)[1]))
        if rule is ScoringRule.QUADRATIC:
            if approx is ApproximationId.BA:
                return -(1.0 / self.sigmas).mean(axis=1) / (2.0 * _SQRT_PI)
            if approx is ApproximationId.ENS:
                return -self.quad_pair_mean()
            return -1.0 / (2.0 * _SQRT_PI * np.sqrt(self._surrogate(approx)[1]))
        if rule is ScoringRule.SE:
            if approx in (ApproximationId.BA, ApproximationId.AV):
                return self.var_av.copy()
            return self.var_mm.copy()
        raise ValueError(f"unknown rule {rule!r}")

    # -- excess risks ----------------------------------------------------------

    def _surrogate_vs_members(self, rule, approx) -> np.ndarray:
        """mean_j d(surrogate, P_j), the (3a,1) / (3b,1) cells."""
        mu_s, var_s = self._surrogate(approx)
        mu_s, var_s = mu_s[:, None], var_s[:, None]
        if rule is ScoringRule.CRPS:
            cross = abs_moment(mu_s - self.means, np.sqrt(var_s + self.variances))
            return cross.mean(axis=1) - (np.sqrt(var_s[:, 0])
                                         + self.sigmas.mean(axis=1)) / _SQRT_PI
        if rule is ScoringRule.LOG:
            kl = 0.5 * (np.log(var_s / self.variances) - 1.0
                        + (self.variances + (mu_s - self.means) ** 2) / var_s)
            return kl.mean(axis=1)
        if rule is ScoringRule.QUADRATIC:
            cross = gaussian_overlap(mu_s, var_s, self.means, self.variances)
            return (0.5 / (_SQRT_PI * np.sqrt(var_s[:, 0]))
                    + (0.5 / (_SQRT_PI * self.sigmas)).mean(axis=1)
                    - 2.0 * cross.mean(axis=1))
        if rule is ScoringRule.SE:
            return self.pop_var.copy()
        raise ValueError(f"unknown rule {rule!r}")

    def _surrogate_vs_mixture(self, rule, approx) -> np.ndarray:
        """d(surrogate, P_ens), the (3a,2) / (3b,2) cells."""
        mu_s, var_s = self._surrogate(approx)
        if rule is ScoringRule.SE:
            # Both surrogates share the mixture mean: identically zero.
            return np.zeros_like(mu_s)
        mu_b, var_b = mu_s[:, None], var_s[:, None]
        if rule is ScoringRule.CRPS:
            cross = abs_moment(mu_b - self.means, np.sqrt(var_b + self.variances))
            return (cross.mean(axis=1) - np.sqrt(var_s) / _SQRT_PI
                    - 0.5 * self.crps_pair_mean())
        if rule is ScoringRule.QUADRATIC:
            cross = gaussian_overlap(mu_b, var_b, self.means, self.variances)
            return (0.5 / (_SQRT_PI * np.sqrt(var_s))
                    + self.quad_pair_mean() - 2.0 * cross.mean(axis=1))
        if rule is ScoringRule.LOG:
            raise NotClosedFormRequested(
                "LOG d(surrogate, mixture) needs the mixture Shannon entropy")
        raise ValueError(f"unknown rule {rule!r}")

    def excess(self, rule: ScoringRule,
               pair: tuple[ApproximationId, ApproximationId]) -> np.ndarray:
        first, second = pair
        ba, ens = ApproximationId.BA, ApproximationId.ENS

        if pair == (ba, ba):
            if rule is ScoringRule.CRPS:
                return (self.crps_pair_mean()
                        - 2.0 * self.sigmas.mean(axis=1) / _SQRT_PI)
            if rule is ScoringRule.LOG:
                ratio = (self.variances[:, None, :]
                         + (self.means[:, :, None] - self.means[:, None, :]) ** 2) \
                    / self.variances[:, :, None]
                return 0.5 * (ratio - 1.0).mean(axis=(1, 2))
            if rule is ScoringRule.QUADRATIC:
                return ((1.0 / self.sigmas).mean(axis=1) / _SQRT_PI
                        - 2.0 * self.quad_pair_mean())
            if rule is ScoringRule.SE:
                return 2.0 * self.pop_var
            raise ValueError(f"unknown rule {rule!r}")

        if pair in ((ens, ba), (ba, ens)):
            # Bregman information: equals Bayes(2) - Bayes(1) for every rule,
            # and the two orientations coincide for symmetric divergences.
            if rule is ScoringRule.LOG:
                raise NotClosedFormRequested(
                    "LOG Bregman information needs the mixture Shannon entropy")
            return self.bayes(rule, ens) - self.bayes(rule, ba)

        if second is ba:
            return self._surrogate_vs_members(rule, first)
        if second is ens:
            return self._surrogate_vs_mixture(rule, first)
        raise ValueError(f"unsupported pair {pair!r}")

    def total(self, rule: ScoringRule,
              pair: tuple[ApproximationId, ApproximationId]) -> np.ndarray:
        return self.bayes(rule, pair[0]) + self.excess(rule, pair)

    def evaluate(self, rule: ScoringRule, est: EstimatorId) -> np.ndarray:
        if est.kind is RiskKind.BAYES:
            return self.bayes(rule, est.first)
        if est.kind is RiskKind.EXCESS:
            return self.excess(rule, (est.first, est.second))
        return self.total(rule, (est.first, est.second))


def _as_batch(ens: GaussianEnsemble) -> EnsembleBatch:
    return EnsembleBatch(ens.means[None, :], ens.variances[None, :])


def bayes_risk(rule: ScoringRule, ens: GaussianEnsemble, approx: ApproximationId):
    """Bayes-risk (aleatoric) estimate; NOT_CLOSED_FORM for (LOG, ENS)."""
    try:
        return float(_as_batch(ens).bayes(rule, approx)[0])
    except NotClosedFormRequested:
        return NOT_CLOSED_FORM


def excess_risk(rule: ScoringRule, ens: GaussianEnsemble,
                pair: tuple[ApproximationId, ApproximationId]):
    """Excess-risk (epistemic) estimate for one approximation pair.

    Accepts the six registry pairs plus (BA, ENS), which exists only for the
    identity Exc(1,1) = Exc(2,1) + Exc(1,2).
    """
    allowed = set(SUPPORTED_PAIRS) | {(ApproximationId.BA, ApproximationId.ENS)}
    if tuple(pair) not in allowed:
        raise ValueError(f"unsupported pair {pair!r}")
    try:
        return float(_as_batch(ens).excess(rule, tuple(pair))[0])
    except NotClosedFormRequested:
        return NOT_CLOSED_FORM


def total_risk(rule: ScoringRule, ens: GaussianEnsemble,
               pair: tuple[ApproximationId, ApproximationId]):
    """Total risk Tot(alpha, beta) = Bayes(alpha) + Exc(alpha, beta)."""
    if tuple(pair) not in SUPPORTED_PAIRS:
        raise ValueError(f"unsupported pair {pair!r}")
    try:
        return float(_as_batch(ens).total(rule, tuple(pair))[0])
    except NotClosedFormRequested:
        return NOT_CLOSED_FORM


def log_quadrature_cells(ens: GaussianEnsemble, quad_cfg=None) -> dict[str, float]:
    """The seven LOG cells that need quadrature, from one mixture-entropy
    integral per ensemble (everything else about them is closed-form)."""
    from .oracle import QuadratureConfig, oracle_entropy

    cfg = quad_cfg or QuadratureConfig()
    h_ens = oracle_entropy(ScoringRule.LOG, ens, cfg)
    batch = _as_batch(ens)
    b1 = float(batch.bayes(ScoringRule.LOG, ApproximationId.BA)[0])
    cells = {"bayes_2": h_ens, "exc_2_1": h_ens - b1, "tot_2_1": 2.0 * h_ens - b1}
    mu, var = ens.means, ens.variances
    for approx, tag in ((ApproximationId.MM, "3a"), (ApproximationId.AV, "3b")):
        mu_s, var_s = batch._surrogate(approx)
        mu_s, var_s = float(mu_s[0]), float(var_s[0])
        # mean_j LS(P_surrogate, P_j) is closed; only H(P_ens) was not.
        cross = float(np.mean(0.5 * (_LOG_2PI + math.log(var_s)
                                     + (var + (mu_s - mu) ** 2) / var_s)))
        exc = cross - h_ens
        cells[f"exc_{tag}_2"] = exc
        b_s = float(batch.bayes(ScoringRule.LOG, approx)[0])
        cells[f"tot_{tag}_2"] = b_s + exc
    return cells


def log_excess_ba_ens(ens: GaussianEnsemble, quad_cfg=None) -> float:
    """LOG Exc(1,2) = mean_ij LS(P_i, P_j) - H(P_ens); oracle-assisted."""
    from .oracle import QuadratureConfig, oracle_entropy

    cfg = quad_cfg or QuadratureConfig()
    h_ens = oracle_entropy(ScoringRule.LOG, ens, cfg)
    mu, var = ens.means, ens.variances
    ls = 0.5 * (_LOG_2PI + np.log(var[:, None])
                + (var[None, :] + (mu[:, None] - mu[None, :]) ** 2) / var[:, None])
    return float(ls.mean()) - h_ens


# -- prediction sets and the measure matrix ----------------------------------

@dataclass(frozen=True)
class PredictionPoint:
    """One test input's ensemble, with optional target and group tag."""

    point_id: str
    ensemble: GaussianEnsemble
    target: Optional[float] = None
    group: Optional[str] = None

    def __post_init__(self):
        if self.target is not None and not math.isfinite(self.target):
            raise ValueError("target must be finite")


@dataclass(frozen=True)
class PredictionSet:
    """The unit of I/O for all downstream metrics."""

    points: tuple[PredictionPoint, ...]

    def __post_init__(self):
        pts = tuple(self.points)
        if not pts:
            raise ValueError("prediction set must contain at least one point")
        ids = [p.point_id for p in pts]
        if len(set(ids)) != len(ids):
            raise ValueError("point ids must be unique")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    def targets(self) -> np.ndarray:
        if any(p.target is None for p in self.points):
            raise ValueError("prediction set has points without targets")
        return np.array([p.target for p in self.points])

    def groups(self) -> list[str]:
        if any(p.group is None for p in self.points):
            raise ValueError("prediction set has points without group labels")
        return [p.group for p in self.points]


@dataclass(frozen=True)
class MeasureColumn:
    rule: ScoringRule
    estimator: EstimatorId
    availability: Availability

    @property
    def name(self) -> str:
        return f"{self.rule.value}_{self.estimator.key}"


@dataclass(frozen=True)
class MeasureMatrix:
    """Per-point values of every requested (rule, estimator) cell.

    Unavailable cells hold NaN; the availability flag on the column says
    why (QuadratureRequired without the oracle fallback)."""

    point_ids: tuple[str, ...]
    columns: tuple[MeasureColumn, ...]
    values: np.ndarray

    def column(self, rule: ScoringRule, est: EstimatorId) -> np.ndarray:
        for k, col in enumerate(self.columns):
            if col.rule is rule and col.estimator == est:
                return self.values[:, k]
        raise KeyError(f"no column for ({rule}, {est.key})")


def measure_matrix(rules: Sequence[ScoringRule], points: PredictionSet,
                   use_oracle_fallback: bool = False,
                   estimators: Sequence[EstimatorId] | None = None,
                   quad_cfg=None) -> MeasureMatrix:
    """Evaluate every estimator for every point.

    Points are grouped by ensemble size so each group runs through the
    vectorized batch kernels in one shot.  QuadratureRequired cells stay NaN
    unless ``use_oracle_fallback`` is set."""
    if len(points.points) == 0:
        raise ValueError("empty prediction set")
    ests = tuple(estimators) if estimators is not None else default_estimators()
    columns = tuple(MeasureColumn(rule, est, availability(rule, est))
                    for rule in rules for est in ests)
    n = len(points.points)
    values = np.full((n, len(columns)), np.nan)

    by_size: dict[int, list[int]] = {}
    for i, pt in enumerate(points.points):
        by_size.setdefault(pt.ensemble.size, []).append(i)

    for size, idxs in by_size.items():
        means = np.stack([points.points[i].ensemble.means for i in idxs])
        variances = np.stack([points.points[i].ensemble.variances for i in idxs])
        batch = EnsembleBatch(means, variances)
        for k, col in enumerate(columns):
            if col.availability is Availability.QUADRATURE_REQUIRED:
                continue
            values[idxs, k] = batch.evaluate(col.rule, col.estimator)

    if use_oracle_fallback:
        quad_cols = [(k, col) for k, col in enumerate(columns)
                     if col.availability is Availability.QUADRATURE_REQUIRED]
        for i, pt in enumerate(points.points):
            if not quad_cols:
                break
            cells = log_quadrature_cells(pt.ensemble, quad_cfg)
            for k, col in quad_cols:
                values[i, k] = cells[col.estimator.key]

    return MeasureMatrix(tuple(p.point_id for p in points.points), columns, values)
