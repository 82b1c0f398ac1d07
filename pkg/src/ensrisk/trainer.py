"""Desk-scale heteroscedastic MLP deep ensembles, trained by hand.

Each member is a small fully connected network with two output heads that
parameterize a Gaussian through its natural parameters eta1 = mu / sigma^2
and eta2 = -1 / (2 sigma^2).  Negativity of eta2 is enforced smoothly via
eta2 = -softplus(raw) - 1e-6, which also bounds the recovered variance.
Training minimizes the natural-parameterization negative log-likelihood

    L = -(eta1 y + eta2 y^2) - eta1^2 / (4 eta2) - log(-2 eta2) / 2
        + log(2 pi) / 2,

whose gradient in (eta1, eta2) is the moment mismatch (E[Y] - y,
E[Y^2] - y^2).  Backpropagation is written out manually so the
finite-difference check in the test suite audits the whole chain; the same
constant log(2 pi)/2 is kept in both NLL variants so they agree exactly
under reparameterization.

Inputs and targets are z-scored from the training split and the
standardization is inverted at prediction time, which these narrow networks
need for stable NLL training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .estimators import (
    Availability,
    EnsembleBatch,
    PredictionPoint,
    PredictionSet,
    availability,
)
from .gaussians import GaussianEnsemble

_LOG_2PI = math.log(2.0 * math.pi)
_ETA2_MARGIN = 1e-6


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss)."""


class Activation(Enum):
    RELU = "relu"
    SILU = "silu"


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int = 1
    hidden_widths: tuple[int, ...] = (8, 8)
    activation: Activation = Activation.SILU

    def __post_init__(self):
        if self.input_dim < 1 or any(w < 1 for w in self.hidden_widths):
            raise ValueError("input_dim and hidden widths must be positive")
        object.__setattr__(self, "hidden_widths", tuple(self.hidden_widths))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("learning_rate, epochs, batch_size must be positive")


# -- losses --------------------------------------------------------------------

def nll_standard(mu, sigma2, y):
    """Gaussian NLL in (mu, sigma^2), including the log(2 pi)/2 constant."""
    mu, sigma2, y = (np.asarray(v, dtype=float) for v in (mu, sigma2, y))
    if np.any(sigma2 <= 0.0):
        raise ValueError("sigma2 must be > 0")
    out = 0.5 * (_LOG_2PI + np.log(sigma2)) + (y - mu) ** 2 / (2.0 * sigma2)
    return float(out) if out.ndim == 0 else out


def nll_natural(eta1, eta2, y):
    """Gaussian NLL in natural parameters; equals ``nll_standard`` under
    eta1 = mu / sigma^2, eta2 = -1 / (2 sigma^2)."""
    eta1, eta2, y = (np.asarray(v, dtype=float) for v in (eta1, eta2, y))
    if np.any(eta2 >= 0.0):
        raise ValueError("eta2 must be < 0")
    out = -(eta1 * y + eta2 * y * y) - eta1 * eta1 / (4.0 * eta2) \
        - 0.5 * np.log(-2.0 * eta2) + 0.5 * _LOG_2PI
    return float(out) if out.ndim == 0 else out


def natural_from_moments(mu, sigma2):
    mu, sigma2 = np.asarray(mu, dtype=float), np.asarray(sigma2, dtype=float)
    return mu / sigma2, -0.5 / sigma2


def moments_from_natural(eta1, eta2):
    eta1, eta2 = np.asarray(eta1, dtype=float), np.asarray(eta2, dtype=float)
    sigma2 = -0.5 / eta2
    return eta1 * sigma2, sigma2


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- the network ---------------------------------------------------------------

class Mlp:
    """One ensemble member: dense layers plus the two natural-parameter heads."""

    def __init__(self, spec: MlpSpec, rng: np.random.Generator):
        self.spec = spec
        dims = [spec.input_dim, *spec.hidden_widths, 2]
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            scale = 1.0 / math.sqrt(fan_in)
            self.weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    def _act(self, z):
        if self.spec.activation is Activation.RELU:
            return np.maximum(z, 0.0)
        return z * _sigmoid(z)

    def _act_grad(self, z):
        if self.spec.activation is Activation.RELU:
            return (z > 0.0).astype(float)
        s = _sigmoid(z)
        return s * (1.0 + z * (1.0 - s))

    def forward(self, x: np.ndarray):
        """Natural parameters for a (n, input_dim) batch."""
        a = x
        pre = []
        post = [x]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = a @ w + b
            pre.append(z)
            a = self._act(z)
            post.append(a)
        out = a @ self.weights[-1] + self.biases[-1]
        eta1 = out[:, 0]
        raw = out[:, 1]
        eta2 = -_softplus(raw) - _ETA2_MARGIN
        cache = (pre, post, raw)
        return eta1, eta2, cache

    def loss_and_gradients(self, x: np.ndarray, y: np.ndarray):
        """Mean natural NLL over the batch and its parameter gradients."""
        n = len(y)
        eta1, eta2, (pre, post, raw) = self.forward(x)
        loss = float(np.mean(nll_natural(eta1, eta2, y)))
        # dL/deta are the moment mismatches of the predicted Gaussian
        d_eta1 = (-y - eta1 / (2.0 * eta2)) / n
        d_eta2 = (-y * y + eta1 * eta1 / (4.0 * eta2 * eta2)
                  - 1.0 / (2.0 * eta2)) / n
        d_out = np.stack([d_eta1, d_eta2 * (-_sigmoid(raw))], axis=1)

        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        delta = d_out
        for layer in reversed(range(len(self.weights))):
            grads_w[layer] = post[layer].T @ delta
            grads_b[layer] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * self._act_grad(pre[layer - 1])
        return loss, grads_w, grads_b

    # flat views used by the finite-difference audit
    def parameter_vector(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in (*self.weights, *self.biases)])

    def set_parameter_vector(self, theta: np.ndarray) -> None:
        offset = 0
        for params in (self.weights, self.biases):
            for i, p in enumerate(params):
                params[i] = theta[offset:offset + p.size].reshape(p.shape).copy()
                offset += p.size
        if offset != len(theta):
            raise ValueError("parameter vector has wrong length")

    def gradient_vector(self, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
        loss, gw, gb = self.loss_and_gradients(x, y)
        return loss, np.concatenate([g.ravel() for g in (*gw, *gb)])


@dataclass
class _AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0


def _adam_step(params: list, grads: list, state: _AdamState, cfg: TrainConfig):
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


@dataclass(frozen=True)
class EnsemblePredictor:
    """M trained members plus the normalization applied around them."""

    spec: MlpSpec
    members: tuple[Mlp, ...]
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_scale: float

    @property
    def size(self) -> int:
        return len(self.members)


def _standardize_stats(values: np.ndarray):
    mean = values.mean(axis=0)
    scale = values.std(axis=0)
    scale = np.where(scale > 0.0, scale, 1.0)
    return mean, scale


def _as_xy(x, y, input_dim: int):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] != input_dim or len(x) != len(y) or len(y) == 0:
        raise ValueError("data must be non-empty (n, input_dim) inputs with n targets")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("training data must be finite")
    return x, y


def train_ensemble(x, y, members: int, spec: MlpSpec | None = None,
                   cfg: TrainConfig | None = None) -> EnsemblePredictor:
    """Train M members from independent initializations (seed + index).

    Deterministic given the config seed; raises TrainingError, naming the
    member, if any epoch produces a non-finite loss.
    """
    spec = spec or MlpSpec()
    cfg = cfg or TrainConfig()
    if members < 1:
        raise ValueError("members must be >= 1")
    x, y = _as_xy(x, y, spec.input_dim)
    x_mean, x_scale = _standardize_stats(x)
    y_mean, y_scale = _standardize_stats(y)
    xs = (x - x_mean) / x_scale
    ys = (y - y_mean) / y_scale

    nets = []
    for idx in range(members):
        rng = np.random.default_rng([cfg.seed, idx])
        net = Mlp(spec, rng)
        state = _AdamState()
        n = len(ys)
        for epoch in range(cfg.epochs):
            perm = rng.permutation(n)
            epoch_loss = 0.0
            for lo in range(0, n, cfg.batch_size):
                sel = perm[lo:lo + cfg.batch_size]
                loss, gw, gb = net.loss_and_gradients(xs[sel], ys[sel])
                epoch_loss += loss * len(sel)
                _adam_step([*net.weights, *net.biases], [*gw, *gb], state, cfg)
            if not math.isfinite(epoch_loss):
                raise TrainingError(
                    f"member {idx} diverged at epoch {epoch} (non-finite loss)")
        nets.append(net)
    return EnsemblePredictor(spec, tuple(nets), x_mean, x_scale,
                             float(y_mean), float(y_scale))


def predict_arrays(pred: EnsemblePredictor, xs) -> tuple[np.ndarray, np.ndarray]:
    """Per-point member means and variances in original units; (n, M) each."""
    xs = np.asarray(xs, dtype=float)
    if xs.ndim == 1:
        xs = xs[:, None]
    if xs.shape[1] != pred.spec.input_dim:
        raise ValueError("input dimensionality does not match the model spec")
    xn = (xs - pred.x_mean) / pred.x_scale
    means = np.empty((len(xs), pred.size))
    variances = np.empty((len(xs), pred.size))
    for j, net in enumerate(pred.members):
        eta1, eta2, _ = net.forward(xn)
        mu, var = moments_from_natural(eta1, eta2)
        means[:, j] = mu * pred.y_scale + pred.y_mean
        variances[:, j] = var * pred.y_scale ** 2
    return means, variances


def predict(pred: EnsemblePredictor, xs, ids: Sequence[str] | None = None,
            targets=None, group: Optional[str] = None) -> PredictionSet:
    """Per-point Gaussian ensembles for a batch of inputs."""
    means, variances = predict_arrays(pred, xs)
    n = len(means)
    if ids is None:
        ids = [str(i) for i in range(n)]
    tg = None if targets is None else np.asarray(targets, dtype=float)
    points = []
    for i in range(n):
        ens = GaussianEnsemble.from_arrays(means[i], variances[i])
        target = None if tg is None else float(tg[i])
        points.append(PredictionPoint(str(ids[i]), ens, target, group))
    return PredictionSet(tuple(points))


def ensemble_nll(pred: EnsemblePredictor, xs, ys) -> float:
    """Mean negative log-likelihood of the ensemble mixture on held-out data."""
    means, variances = predict_arrays(pred, xs)
    ys = np.asarray(ys, dtype=float)
    log_comp = -0.5 * (_LOG_2PI + np.log(variances)
                       + (ys[:, None] - means) ** 2 / variances)
    shift = log_comp.max(axis=1, keepdims=True)
    log_mix = shift[:, 0] + np.log(np.mean(np.exp(log_comp - shift), axis=1))
    return float(-np.mean(log_mix))


# -- checkpoints -----------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(pred: EnsemblePredictor, path: str) -> None:
    """Write the predictor as versioned JSON (weights in full precision)."""
    import json

    from .dataio import atomic_write

    doc = {
        "format_version": CHECKPOINT_VERSION,
        "spec": {
            "input_dim": pred.spec.input_dim,
            "hidden_widths": list(pred.spec.hidden_widths),
            "activation": pred.spec.activation.value,
        },
        "normalization": {
            "x_mean": pred.x_mean.tolist(),
            "x_scale": pred.x_scale.tolist(),
            "y_mean": pred.y_mean,
            "y_scale": pred.y_scale,
        },
        "members": [
            {
                "weights": [w.tolist() for w in net.weights],
                "biases": [b.tolist() for b in net.biases],
            }
            for net in pred.members
        ],
    }
    atomic_write(path, json.dumps(doc) + "\n")


def load_checkpoint(path: str) -> EnsemblePredictor:
    import json

    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('format_version')}")
    spec = MlpSpec(doc["spec"]["input_dim"], tuple(doc["spec"]["hidden_widths"]),
                   Activation(doc["spec"]["activation"]))
    members = []
    for entry in doc["members"]:
        net = Mlp(spec, np.random.default_rng(0))
        net.weights = [np.asarray(w, dtype=float) for w in entry["weights"]]
        net.biases = [np.asarray(b, dtype=float) for b in entry["biases"]]
        members.append(net)
    norm = doc["normalization"]
    return EnsemblePredictor(spec, tuple(members),
                             np.asarray(norm["x_mean"], dtype=float),
                             np.asarray(norm["x_scale"], dtype=float),
                             float(norm["y_mean"]), float(norm["y_scale"]))


# -- active learning -------------------------------------------------------------

@dataclass(frozen=True)
class ActiveLearningResult:
    """Held-out NLL after each training round, plus acquisition bookkeeping."""

    nll_trajectory: tuple[float, ...]
    acquired: tuple[int, ...]
    truncated: bool


def _derived_seed(seed: int, salt: int) -> int:
    return int(np.random.SeedSequence([seed, salt]).generate_state(1, np.uint64)[0])


def active_learning_loop(pool_x, pool_y, initial_indices, measure,
                         iterations: int, batch: int,
                         members: int, heldout_x, heldout_y,
                         spec: MlpSpec | None = None,
                         cfg: TrainConfig | None = None) -> ActiveLearningResult:
    """Softmax acquisition over an uncertainty measure, without replacement.

    ``measure`` is a (rule, EstimatorId) pair evaluated in closed form on
    the pool predictions, or None for the Random baseline.  Each iteration
    trains a fresh ensemble, records held-out NLL, then moves ``batch``
    pool points into the training set by sampling from softmax(score); a
    final ensemble is trained after the last acquisition, so the trajectory
    has iterations + 1 entries.  The pool must be disjoint from the
    held-out data; an exhausted pool stops the loop early with the
    truncation flag set.
    """
    spec = spec or MlpSpec()
    cfg = cfg or TrainConfig()
    pool_x, pool_y = _as_xy(pool_x, pool_y, spec.input_dim)
    if iterations < 1 or batch < 1:
        raise ValueError("iterations and batch must be >= 1")
    if measure is not None:
        rule, est = measure
        if availability(rule, est) is Availability.QUADRATURE_REQUIRED:
            raise ValueError(f"acquisition measure {rule.value}:{est.key} "
                             "is not available in closed form")

    train_idx = sorted(set(int(i) for i in initial_indices))
    if not train_idx:
        raise ValueError("initial index set must be non-empty")
    remaining = sorted(set(range(len(pool_y))) - set(train_idx))
    acq_rng = np.random.default_rng([cfg.seed, 0xACC])
    trajectory = []
    acquired: list[int] = []
    truncated = False

    for it in range(iterations + 1):
        run_cfg = replace(cfg, seed=_derived_seed(cfg.seed, it))
        predictor = train_ensemble(pool_x[train_idx], pool_y[train_idx],
                                   members, spec, run_cfg)
        trajectory.append(ensemble_nll(predictor, heldout_x, heldout_y))
        if it == iterations:
            break
        if not remaining:
            truncated = True
            break
        take = min(batch, len(remaining))
        if take < batch:
            truncated = True
        if measure is None:
            chosen = acq_rng.choice(len(remaining), size=take, replace=False)
        else:
            means, variances = predict_arrays(predictor, pool_x[remaining])
            scores = EnsembleBatch(means, variances).evaluate(rule, est)
            # Gumbel top-k == sampling without replacement from
            # softmax(scores); unlike exponentiating, it cannot underflow
            # when one region dominates the scores.
            u = acq_rng.random(len(remaining))
            gumbel = -np.log(-np.log(np.clip(u, 1e-300, 1.0 - 1e-16)))
            keys = scores + gumbel
            chosen = np.argpartition(-keys, take - 1)[:take]
        picked = [remaining[i] for i in sorted(chosen)]
        acquired.extend(picked)
        train_idx = sorted(set(train_idx) | set(picked))
        remaining = [i for i in remaining if i not in set(picked)]

    return ActiveLearningResult(tuple(trajectory), tuple(acquired), truncated)
