"""Boosting driver for one or several jointly trained distribution parameters.

Each parameter j gets its own additive tree ensemble, learning rate,
gradient clipping threshold M_j, second-order blend weight a_j, and
regularization.  A round proceeds as:

  1. gradients and hessians for every parameter active this round are
     evaluated at the same pre-round state (simultaneous-update semantics),
  2. per-sample gradients are clipped to [-M_j, M_j] and hessians replaced
     by max(0, h), which is what makes non-convex losses trainable,
  3. one tree per active parameter is fitted and applied with shrinkage,
     the updated estimates clamped into the parameter's working interval.

Estimates start from the constant maximum-likelihood fit, which keeps early
gradients tame and clipping/clamping rare.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import NumericError, TrainingError, ValidationError
from .losses import Loss, ParameterDomain
from .tree import TreeParams, build_tree, presort_features


def clip_gradient(g, m):
    """Symmetric truncation of a first-order statistic to [-m, m].

    Non-finite inputs are mapped to the band edge: +m for NaN, the signed
    edge for infinities, so a single degenerate sample cannot poison a leaf.
    """
    m = float(m)
    if not (math.isfinite(m) and m > 0):
        raise ValidationError("clip threshold m must be positive and finite")
    g = float(g)
    if math.isnan(g):
        return m
    return max(-m, min(m, g))


def effective_hessian(h, a=0.5):
    """Clipped second-order statistic max(0, h); non-finite maps to 0.

    The blend weight a is validated here but applied inside the leaf
    formulas, not to the returned statistic.
    """
    a = float(a)
    if not (math.isfinite(a) and 0.0 <= a <= 0.5):
        raise ValidationError("a must lie in [0, 1/2]")
    h = float(h)
    if not math.isfinite(h):
        return 0.0
    return max(0.0, h)


def clamp_to_domain(theta, domain: ParameterDomain):
    """min(hi, max(lo, theta))."""
    return min(domain.hi, max(domain.lo, float(theta)))


def _clip_vec(g, m):
    return np.where(np.isnan(g), m, np.clip(g, -m, m))


def _heff_vec(h):
    return np.where(np.isfinite(h), np.maximum(h, 0.0), 0.0)


@dataclass(frozen=True)
class ParamTrainConfig:
    """Per-parameter training hyperparameters.

    rounds caps how many trees this parameter may receive (None: no cap up
    to the master round count).  interval/offset schedule the parameter:
    it trains on 0-based round indices t with t >= offset and
    (t - offset) % interval == 0.  domain/base_value override the loss's
    data-derived defaults.
    """

    eta: float = 0.1
    rounds: int | None = None
    clip_m: float = 1e4
    tree: TreeParams = field(default_factory=TreeParams)
    interval: int = 1
    offset: int = 0
    domain: ParameterDomain | None = None
    base_value: float | None = None

    @property
    def a(self):
        return self.tree.a

    def validate(self):
        if not (0.0 < self.eta <= 1.0):
            raise ValidationError(f"eta must lie in (0, 1], got {self.eta}")
        if self.rounds is not None and int(self.rounds) < 0:
            raise ValidationError("rounds cap must be >= 0")
        if not (math.isfinite(self.clip_m) and self.clip_m > 0):
            raise ValidationError("clip_m must be positive and finite")
        if int(self.interval) < 1:
            raise ValidationError("interval must be >= 1")
        if int(self.offset) < 0:
            raise ValidationError("offset must be >= 0")
        if self.tree.a == 0.0 and self.tree.lambda_reg <= 0.0:
            raise ValidationError("lambda_reg must be > 0 when a = 0")
        if self.base_value is not None and not math.isfinite(self.base_value):
            raise ValidationError("base_value override must be finite")


@dataclass
class ParamEnsemble:
    """Base value plus the ordered trees fitted for one parameter."""

    name: str
    base_value: float
    domain: ParameterDomain
    trees: list  # of (RegressionTree, eta at fit time)


class BoostedModel:
    """Per-parameter base values and tree ensembles; immutable after training.

    Prediction for parameter j is the base value plus the shrunken sum of
    its trees, clamped once into the parameter's working interval.
    """

    def __init__(self, loss_name, nuisance, feature_names, params):
        self.loss_name = str(loss_name)
        self.nuisance = dict(nuisance)
        self.feature_names = tuple(feature_names)
        self.params = list(params)

    @property
    def n_params(self):
        return len(self.params)

    @property
    def param_names(self):
        return tuple(p.name for p in self.params)

    def _check_width(self, width):
        if width != len(self.feature_names):
            raise ValidationError(
                f"expected {len(self.feature_names)} features "
                f"({', '.join(self.feature_names)}), got {width}")

    def predict(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        self._check_width(x.shape[0])
        out = []
        for p in self.params:
            acc = p.base_value
            for tree, eta in p.trees:
                acc += eta * tree.predict(x)
            out.append(clamp_to_domain(acc, p.domain))
        return tuple(out)

    def predict_many(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValidationError("X must be 2-D")
        self._check_width(X.shape[1])
        out = np.empty((X.shape[0], self.n_params))
        for j, p in enumerate(self.params):
            acc = np.full(X.shape[0], p.base_value)
            for tree, eta in p.trees:
                acc += eta * tree.predict_many(X)
            out[:, j] = p.domain.clip(acc)
        return out

    def fingerprint(self):
        from . import model_io  # deferred: model_io imports this module

        import hashlib

        return hashlib.sha256(model_io.dumps(self).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class RoundRecord:
    """One row of the training trace."""

    round: int                # 1-based
    active: tuple             # per-parameter bool
    train_nll: float
    max_abs_grad: tuple       # per-parameter float or None when inactive
    clamped_rows: tuple       # per-parameter count of rows clamped this round


@dataclass
class TrainResult:
    model: BoostedModel
    trace: list               # of RoundRecord, one per round
    initial_nll: float
    final_theta: np.ndarray   # (n, l) training-path estimates
    clamped: np.ndarray       # (n, l) bool: row ever clamped during training


def train(ds: Dataset, loss: Loss, configs, total_rounds, compute_trace=True):
    """Run the boosting loop and return the model plus its training trace.

    Within a round, parameters update sequentially in index order, but all
    gradients were evaluated at the pre-round state.  The per-sample
    estimate path is clamped into the working interval after every update;
    the path (not tree replay) is what gradients and the loss trace see.
    """
    if not isinstance(total_rounds, (int, np.integer)) or int(total_rounds) < 0:
        raise ValidationError("total_rounds must be a nonnegative integer")
    total_rounds = int(total_rounds)
    l = loss.n_params
    if len(configs) != l:
        raise ValidationError(
            f"loss '{loss.name}' has {l} parameter(s) but {len(configs)} config blocks given")
    for cfg in configs:
        cfg.validate()
    loss.validate_response(ds.response)

    defaults = loss.default_domains(ds)
    domains = [cfg.domain if cfg.domain is not None else defaults[j]
               for j, cfg in enumerate(configs)]

    if any(cfg.base_value is None for cfg in configs):
        mle = loss.mle_init(ds)
    else:
        mle = (None,) * l
    base = [clamp_to_domain(cfg.base_value if cfg.base_value is not None else mle[j],
                            domains[j])
            for j, cfg in enumerate(configs)]

    n = ds.n_rows
    X = ds.features
    y, expo, adj = ds.response, ds.exposure, ds.adjustment
    presorted = presort_features(X)

    theta = np.empty((n, l))
    for j in range(l):
        theta[:, j] = base[j]
    theta_cols = [theta[:, j] for j in range(l)]
    clamped = np.zeros((n, l), dtype=bool)
    ensembles = [ParamEnsemble(loss.param_names[j], base[j], domains[j], [])
                 for j in range(l)]

    initial_nll = float(np.sum(loss.value(theta_cols, y, expo, adj)))
    if not math.isfinite(initial_nll):
        raise NumericError("training loss is non-finite at the start point")

    trace = []
    for t in range(1, total_rounds + 1):
        ridx = t - 1
        active = []
        for j, cfg in enumerate(configs):
            scheduled = ridx >= cfg.offset and (ridx - cfg.offset) % cfg.interval == 0
            capped = cfg.rounds is not None and len(ensembles[j].trees) >= cfg.rounds
            if scheduled and not capped:
                active.append(j)

        # Simultaneous-update semantics: all statistics at the pre-round state.
        stats = {}
        for j in active:
            cfg = configs[j]
            g = _clip_vec(np.asarray(loss.grad(j, theta_cols, y, expo, adj),
                                     dtype=np.float64), cfg.clip_m)
            h = _heff_vec(np.asarray(loss.hess(j, theta_cols, y, expo, adj),
                                     dtype=np.float64))
            assert np.all(np.abs(g) <= cfg.clip_m)
            stats[j] = (g, h)

        max_abs_g = [None] * l
        n_clamped = [0] * l
        for j in active:
            cfg = configs[j]
            g, h = stats[j]
            max_abs_g[j] = float(np.max(np.abs(g)))
            fitted = build_tree(X, g, h, cfg.tree, presorted)
            step = cfg.eta * fitted.predict_many(X)
            raw = theta[:, j] + step
            new = domains[j].clip(raw)
            hit = new != raw
            n_clamped[j] = int(np.sum(hit))
            clamped[:, j] |= hit
            theta[:, j] = new
            assert domains[j].contains(theta[:, j])
            ensembles[j].trees.append((fitted, cfg.eta))

        if compute_trace:
            nll = float(np.sum(loss.value(theta_cols, y, expo, adj)))
            if not math.isfinite(nll):
                raise TrainingError(f"non-finite training loss at round {t}", t)
            trace.append(RoundRecord(
                round=t,
                active=tuple(j in active for j in range(l)),
                train_nll=nll,
                max_abs_grad=tuple(max_abs_g),
                clamped_rows=tuple(n_clamped),
            ))

    model = BoostedModel(loss.name, loss.nuisance, ds.feature_names, ensembles)
    return TrainResult(model=model, trace=trace, initial_nll=initial_nll,
                       final_theta=theta, clamped=clamped)
