"""Losses, the risk head, and gradient-descent training of the clearance model.

Two training modes mirror the two architectures:

* ``baseline``  - heteroscedastic Gaussian NLL on the (mu, sigma) heads only.
  The kernel-width head and the risk classifier receive exactly zero gradient.
* ``augmented`` - NLL plus a cross-entropy term computed by the risk head:
  reparameterized clearance samples -> constraint violations -> empirical MMD
  (with the predicted kernel width) -> small classifier -> softmax. The CE
  gradient flows back into the mean, spread, and width heads through the
  sampling noise, which is recorded so every step can be replayed exactly for
  finite-difference verification.

A third, test-only mode ``nll_sigma_penalty`` adds a direct penalty on the
predicted spread; it exists to document the variance-collapse failure that the
cross-entropy supervision avoids.

All gradients are hand-derived; `finite_difference_check` is the entry point
that validates them against central differences with replayed noise.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .data import ClearanceDataset
from .dynamics import RobotState
from .model import (
    ClearancePrediction,
    ModelParams,
    PolarFeaturizer,
    RiskHeadParams,
    forward_batch,
    sigmoid,
)
from .risk import draw_dirac_samples, empirical_mmd, mmd_batch_grad, residual

MODES = ("baseline", "augmented", "nll_sigma_penalty")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    risk_samples: int = 50  # reparameterized draws per sample
    d_o: float = 0.3  # robot footprint radius (m)
    learning_rate: float = 1e-3
    momentum: float = 0.9
    epochs: int = 60
    batch_size: int = 256
    nll_weight: float = 1.0
    ce_weight: float = 1.0
    sigma_penalty: float = 0.0  # only read in mode "nll_sigma_penalty"
    seed: int = 0
    holdout_fraction: float = 0.1
    hidden: int = 64
    risk_hidden: int = 16
    n_sectors: int = 32
    dirac_variance: float = 1e-5
    grad_clip: float | None = None

    def __post_init__(self):
        if self.risk_samples < 2:
            raise ValueError("risk_samples must be >= 2")
        if self.d_o <= 0:
            raise ValueError("d_o must be positive")


# ---------------------------------------------------------------------------
# Elementary losses and the sampling path

def nll_loss(pred: ClearancePrediction, d_gt: float) -> float:
    """Gaussian negative log-likelihood 0.5*log(2*pi*sigma^2) + (d-mu)^2/(2*sigma^2)."""
    if pred.sigma <= 0:
        raise ValueError("sigma must be positive")
    var = pred.sigma**2
    return 0.5 * math.log(2.0 * math.pi * var) + (d_gt - pred.mu) ** 2 / (2.0 * var)


def ce_loss(yhat: np.ndarray, y: np.ndarray) -> float:
    """Cross entropy -sum(y * log(yhat)); yhat must lie in the simplex interior."""
    yhat = np.asarray(yhat, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(-(y * np.log(yhat)).sum())


def clearance_from_eps(pred: ClearancePrediction, eps: np.ndarray) -> np.ndarray:
    """Replay core of the reparameterization: mu + sigma * eps."""
    return pred.mu + pred.sigma * np.asarray(eps, dtype=float)


def reparameterize(
    pred: ClearancePrediction, rng: np.random.Generator, n: int
) -> tuple[np.ndarray, np.ndarray]:
    """Draw n clearance samples mu + sigma*eps; returns (samples, eps) for replay."""
    if pred.sigma <= 0:
        raise ValueError("sigma must be positive")
    eps = rng.standard_normal(n)
    return clearance_from_eps(pred, eps), eps


def _softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=1, keepdims=True)


def risk_head_forward(r: np.ndarray, phi: RiskHeadParams):
    """Scalar risk batch (B,) -> class probabilities (B, 2) plus backprop cache."""
    pre1 = r[:, None] * phi.v1[None, :] + phi.c1
    a1 = np.tanh(pre1)
    z = a1 @ phi.v2.T + phi.c2
    return _softmax(z), (a1, z)


def risk_head(
    pred: ClearancePrediction,
    phi: RiskHeadParams,
    rng: np.random.Generator,
    cfg: TrainConfig,
) -> np.ndarray:
    """Full pipeline for one prediction: sample, violate, embed, classify.

    Returns the softmax output [p(collision), p(safe)].
    """
    samples, _ = reparameterize(pred, rng, cfg.risk_samples)
    hbar = residual(samples, cfg.d_o)
    dirac = draw_dirac_samples(rng, cfg.risk_samples, cfg.dirac_variance)
    r = empirical_mmd(hbar, dirac, pred.lam)
    yhat, _ = risk_head_forward(np.array([r]), phi)
    return yhat[0]


# ---------------------------------------------------------------------------
# Batched loss + hand-derived gradients

@dataclass(eq=False)
class BatchNoise:
    """Fixed noise draws so a training step can be replayed bit-for-bit."""

    eps: np.ndarray  # (B, N) reparameterization noise
    dirac: np.ndarray  # (B, N) near-Dirac reference samples

    @classmethod
    def draw(cls, rng: np.random.Generator, batch: int, cfg: TrainConfig) -> "BatchNoise":
        return cls(
            eps=rng.standard_normal((batch, cfg.risk_samples)),
            dirac=draw_dirac_samples(
                rng, batch * cfg.risk_samples, cfg.dirac_variance
            ).reshape(batch, cfg.risk_samples),
        )


@dataclass
class LossTerms:
    total: float
    nll: float
    ce: float
    penalty: float = 0.0


def loss_and_grad(
    params: ModelParams,
    phi: RiskHeadParams,
    x: np.ndarray,
    d_gt: np.ndarray,
    safe: np.ndarray,
    noise: BatchNoise,
    mode: str,
    cfg: TrainConfig,
) -> tuple[LossTerms, ModelParams, RiskHeadParams]:
    """Batch-mean loss and gradients w.r.t. both parameter sets.

    In baseline / penalty modes the returned risk-head gradient and the
    kernel-width head gradient are exactly zero.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    b = x.shape[0]
    mu, sigma, lam, (x, h1, h2, sraw, lraw) = forward_batch(params, x, cache=True)
    var = sigma**2
    err = d_gt - mu
    nll = 0.5 * np.log(2.0 * math.pi * var) + err**2 / (2.0 * var)
    nll_mean = float(nll.mean())

    dmu = cfg.nll_weight * (mu - d_gt) / var / b
    dsigma = cfg.nll_weight * (1.0 / sigma - err**2 / sigma**3) / b
    dlam = np.zeros(b)
    grad_phi = RiskHeadParams(
        v1=np.zeros_like(phi.v1),
        c1=np.zeros_like(phi.c1),
        v2=np.zeros_like(phi.v2),
        c2=np.zeros_like(phi.c2),
    )

    ce_mean = 0.0
    penalty = 0.0
    if mode == "augmented":
        d_samp = mu[:, None] + sigma[:, None] * noise.eps
        hbar = np.maximum(0.0, cfg.d_o - d_samp)
        r, dr_dh, dr_dlam = mmd_batch_grad(hbar, noise.dirac, lam)
        yhat, (a1, _) = risk_head_forward(r, phi)
        cls = safe.astype(int)  # class 1 = safe
        p_true = yhat[np.arange(b), cls]
        ce = -np.log(p_true)
        ce_mean = float(ce.mean())

        onehot = np.zeros((b, 2))
        onehot[np.arange(b), cls] = 1.0
        dz = cfg.ce_weight * (yhat - onehot) / b
        grad_phi.v2 = dz.T @ a1
        grad_phi.c2 = dz.sum(axis=0)
        da1 = dz @ phi.v2
        dpre1 = da1 * (1.0 - a1**2)
        grad_phi.v1 = (dpre1 * r[:, None]).sum(axis=0)
        grad_phi.c1 = dpre1.sum(axis=0)
        dr = dpre1 @ phi.v1

        dhbar = dr[:, None] * dr_dh
        dlam = dr * dr_dlam
        dd = -dhbar * (hbar > 0.0)
        dmu = dmu + dd.sum(axis=1)
        dsigma = dsigma + (dd * noise.eps).sum(axis=1)
    elif mode == "nll_sigma_penalty":
        penalty = float(cfg.sigma_penalty * sigma.mean())
        dsigma = dsigma + cfg.sigma_penalty / b

    dsraw = dsigma * sigmoid(sraw)
    dlraw = dlam * sigmoid(lraw)
    dg = np.column_stack([dmu, dsraw, dlraw])
    grad = ModelParams(
        w3=dg.T @ h2,
        b3=dg.sum(axis=0),
        w1=np.empty(0),
        b1=np.empty(0),
        w2=np.empty(0),
        b2=np.empty(0),
        n_features=params.n_features,
        horizon=params.horizon,
    )
    dh2 = dg @ params.w3
    dpre2 = dh2 * (1.0 - h2**2)
    grad.w2 = dpre2.T @ h1
    grad.b2 = dpre2.sum(axis=0)
    dh1 = dpre2 @ params.w2
    dpre1h = dh1 * (1.0 - h1**2)
    grad.w1 = dpre1h.T @ x
    grad.b1 = dpre1h.sum(axis=0)

    total = cfg.nll_weight * nll_mean + cfg.ce_weight * ce_mean + penalty
    return LossTerms(total, nll_mean, ce_mean, penalty), grad, grad_phi


def batch_loss(
    params: ModelParams,
    phi: RiskHeadParams,
    x: np.ndarray,
    d_gt: np.ndarray,
    safe: np.ndarray,
    noise: BatchNoise,
    mode: str,
    cfg: TrainConfig,
) -> LossTerms:
    """Loss only (no gradients); shares the exact forward path of loss_and_grad."""
    terms, _, _ = loss_and_grad(params, phi, x, d_gt, safe, noise, mode, cfg)
    return terms


# ---------------------------------------------------------------------------
# Training loop

@dataclass
class LogRow:
    epoch: int
    nll: float
    ce: float
    holdout_accuracy: float
    mean_sigma: float
    median_sigma: float


@dataclass
class TrainingLog:
    rows: list[LogRow] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "nll", "ce", "holdout_accuracy", "mean_sigma", "median_sigma"])
            for r in self.rows:
                w.writerow([r.epoch, r.nll, r.ce, r.holdout_accuracy, r.mean_sigma, r.median_sigma])


@dataclass(eq=False)
class TrainResult:
    params: ModelParams
    risk_head: RiskHeadParams
    log: TrainingLog
    holdout_index: np.ndarray
    meta: dict


def build_inputs(dataset: ClearanceDataset, n_sectors: int = 32):
    """Assemble the flat model-input matrix: per-sample [observation | commands]."""
    featurizer = PolarFeaturizer(dataset.fov, dataset.max_range, n_sectors)
    obs = np.empty((dataset.n_snapshots, n_sectors + 2))
    for s in range(dataset.n_snapshots):
        x, y, psi, v, w = dataset.states[s]
        obs[s] = featurizer.featurize(dataset.clouds[s], RobotState(x, y, psi, v, w)).vector
    n = len(dataset)
    u_flat = dataset.controls.reshape(n, -1)
    x_all = np.concatenate([obs[dataset.snapshot], u_flat], axis=1)
    return x_all, obs, featurizer


def _holdout_split(dataset: ClearanceDataset, cfg: TrainConfig):
    """Split sample indices by snapshot so shared clouds never leak across sides."""
    rng = np.random.default_rng([cfg.seed, 17])
    snaps = rng.permutation(dataset.n_snapshots)
    n_hold = int(round(dataset.n_snapshots * cfg.holdout_fraction))
    n_hold = min(max(n_hold, 1) if cfg.holdout_fraction > 0 else 0, dataset.n_snapshots - 1)
    hold_snaps = np.zeros(dataset.n_snapshots, dtype=bool)
    hold_snaps[snaps[:n_hold]] = True
    hold_mask = hold_snaps[dataset.snapshot]
    return np.flatnonzero(~hold_mask), np.flatnonzero(hold_mask)


def evaluate(
    params: ModelParams,
    phi: RiskHeadParams,
    x: np.ndarray,
    d_gt: np.ndarray,
    safe: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> dict:
    """Held-out metrics: NLL, CE, risk-head accuracy, spread statistics."""
    mu, sigma, lam = forward_batch(params, x)
    noise = BatchNoise.draw(rng, x.shape[0], cfg)
    d_samp = mu[:, None] + sigma[:, None] * noise.eps
    hbar = np.maximum(0.0, cfg.d_o - d_samp)
    r, _, _ = mmd_batch_grad(hbar, noise.dirac, lam)
    yhat, _ = risk_head_forward(r, phi)
    cls = safe.astype(int)
    var = sigma**2
    nll = 0.5 * np.log(2.0 * math.pi * var) + (d_gt - mu) ** 2 / (2.0 * var)
    acc = float((yhat.argmax(axis=1) == cls).mean())
    return {
        "nll": float(nll.mean()),
        "ce": float(-np.log(yhat[np.arange(len(cls)), cls]).mean()),
        "accuracy": acc,
        "mean_sigma": float(sigma.mean()),
        "median_sigma": float(np.median(sigma)),
        "sigma": sigma,
        "risk": r,
        "yhat": yhat,
        "mu": mu,
    }


def train(dataset: ClearanceDataset, cfg: TrainConfig, mode: str) -> TrainResult:
    """Mini-batch gradient descent with momentum; deterministic given cfg.seed.

    Raises TrainingDiverged on a non-finite loss with step diagnostics.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    x_all, _, featurizer = build_inputs(dataset, cfg.n_sectors)
    train_idx, hold_idx = _holdout_split(dataset, cfg)
    d_gt = dataset.clearance
    safe = dataset.safe

    rng = np.random.default_rng([cfg.seed, 29])
    params = ModelParams.init(rng, cfg.n_sectors + 2, dataset.horizon, cfg.hidden)
    phi = RiskHeadParams.init(rng, cfg.risk_hidden)
    vel_theta = np.zeros(params.to_vector().size)
    vel_phi = np.zeros(phi.to_vector().size)

    log = TrainingLog()
    for epoch in range(cfg.epochs):
        order = rng.permutation(train_idx)
        nll_sum = ce_sum = 0.0
        n_batches = 0
        for lo in range(0, order.size, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            noise = BatchNoise.draw(rng, idx.size, cfg)
            terms, grad, grad_phi = loss_and_grad(
                params, phi, x_all[idx], d_gt[idx], safe[idx], noise, mode, cfg
            )
            if not math.isfinite(terms.total):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {n_batches}: "
                    f"nll={terms.nll:.4g} ce={terms.ce:.4g} penalty={terms.penalty:.4g}"
                )
            g_theta = grad.to_vector()
            g_phi = grad_phi.to_vector()
            if cfg.grad_clip is not None:
                norm = math.sqrt(float(g_theta @ g_theta) + float(g_phi @ g_phi))
                if norm > cfg.grad_clip:
                    scale = cfg.grad_clip / norm
                    g_theta = g_theta * scale
                    g_phi = g_phi * scale
            vel_theta = cfg.momentum * vel_theta - cfg.learning_rate * g_theta
            vel_phi = cfg.momentum * vel_phi - cfg.learning_rate * g_phi
            params = params.with_vector(params.to_vector() + vel_theta)
            phi = phi.with_vector(phi.to_vector() + vel_phi)
            nll_sum += terms.nll
            ce_sum += terms.ce
            n_batches += 1
        rng_eval = np.random.default_rng([cfg.seed, 1000 + epoch])
        eval_idx = hold_idx if hold_idx.size else train_idx
        ev = evaluate(params, phi, x_all[eval_idx], d_gt[eval_idx], safe[eval_idx], cfg, rng_eval)
        log.rows.append(
            LogRow(
                epoch=epoch,
                nll=nll_sum / max(n_batches, 1),
                ce=ce_sum / max(n_batches, 1),
                holdout_accuracy=ev["accuracy"],
                mean_sigma=ev["mean_sigma"],
                median_sigma=ev["median_sigma"],
            )
        )
    meta = {
        "mode": mode,
        "n_sectors": cfg.n_sectors,
        "fov": dataset.fov,
        "max_range": dataset.max_range,
        "d_o": cfg.d_o,
        "dt": dataset.dt,
        "horizon": dataset.horizon,
        "hidden": cfg.hidden,
        "seed": cfg.seed,
    }
    return TrainResult(params, phi, log, hold_idx, meta)


# ---------------------------------------------------------------------------
# Finite-difference verification

def finite_difference_check(
    params: ModelParams,
    phi: RiskHeadParams,
    x: np.ndarray,
    d_gt: np.ndarray,
    safe: np.ndarray,
    noise: BatchNoise,
    mode: str,
    cfg: TrainConfig,
    n_coords: int,
    rng: np.random.Generator,
    delta: float = 1e-5,
) -> dict:
    """Compare analytic gradients against central differences with replayed noise.

    Coordinates are drawn uniformly over theta (and phi in augmented mode).
    Relative error uses max(|analytic|, |numeric|, 1e-6) as denominator so
    coordinates with negligible gradient are judged on absolute agreement.
    """
    _, grad, grad_phi = loss_and_grad(params, phi, x, d_gt, safe, noise, mode, cfg)
    theta0 = params.to_vector()
    phi0 = phi.to_vector()
    analytic = np.concatenate([grad.to_vector(), grad_phi.to_vector()])
    n_theta = theta0.size
    n_total = n_theta + (phi0.size if mode == "augmented" else 0)
    coords = rng.choice(n_total, size=min(n_coords, n_total), replace=False)

    def loss_at(theta_vec, phi_vec) -> float:
        t = params.with_vector(theta_vec)
        p = phi.with_vector(phi_vec)
        return batch_loss(t, p, x, d_gt, safe, noise, mode, cfg).total

    errors = np.empty(coords.size)
    for j, c in enumerate(coords):
        tp, tm = theta0.copy(), theta0.copy()
        pp, pm = phi0.copy(), phi0.copy()
        if c < n_theta:
            tp[c] += delta
            tm[c] -= delta
        else:
            pp[c - n_theta] += delta
            pm[c - n_theta] -= delta
        num = (loss_at(tp, pp) - loss_at(tm, pm)) / (2.0 * delta)
        ana = analytic[c]
        errors[j] = abs(ana - num) / max(abs(ana), abs(num), 1e-6)
    return {
        "max_rel_error": float(errors.max()),
        "mean_rel_error": float(errors.mean()),
        "n_coords": int(coords.size),
        "errors": errors,
        "coords": coords,
    }
