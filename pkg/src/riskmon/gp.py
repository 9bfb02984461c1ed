"""Exact GP regression with an ARD-RBF kernel.

Zero-mean prior, Gaussian likelihood, hyperparameters (per-dimension length
scales, signal variance, noise variance) optimized in log space by maximizing
the log marginal likelihood. Targets are the 0/1 safe/risky labels treated as
regression values; the posterior predictive (mu*, sigma*^2) feeds the risk
score downstream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics
from .numerics import CholeskyFactor, DimensionMismatch

NOISE_FLOOR = 1e-6
TRAINING_CAP = 4096
HYPEROPT_CAP = 1024  # marginal-likelihood iterations are cubic in N

# Signal-variance floor used when fitting risk models. Mostly-zero targets
# would otherwise shrink the prior variance, and with it the far-field
# predictive std that makes unexplored inputs score as risky; keeping the
# prior std above the flag threshold preserves that behavior.
RISK_SIGNAL_FLOOR = 0.8

DEFAULT_LR = 0.05
DEFAULT_MAX_ITERS = 200
DEFAULT_TOL = 1e-5


class DivergedOptimization(Exception):
    pass


@dataclass
class GPHyper:
    """Kernel hyperparameters, stored in log space to enforce positivity."""

    log_lengthscales: np.ndarray
    log_signal_var: float
    log_noise_var: float

    @classmethod
    def default(cls, dim: int) -> "GPHyper":
        return cls(
            log_lengthscales=np.zeros(dim),
            log_signal_var=0.0,
            log_noise_var=float(np.log(0.05)),
        )

    @property
    def dim(self) -> int:
        return self.log_lengthscales.size

    @property
    def lengthscales(self) -> np.ndarray:
        return np.exp(self.log_lengthscales)

    @property
    def signal_var(self) -> float:
        return float(np.exp(self.log_signal_var))

    @property
    def noise_var(self) -> float:
        return float(np.exp(self.log_noise_var))

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.log_lengthscales, [self.log_signal_var, self.log_noise_var]]
        )

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "GPHyper":
        vec = np.asarray(vec, dtype=float)
        return cls(
            log_lengthscales=vec[:-2].copy(),
            log_signal_var=float(vec[-2]),
            log_noise_var=float(max(vec[-1], np.log(NOISE_FLOOR))),
        )


def kernel_matrix(x1: np.ndarray, x2: np.ndarray, hyper: GPHyper) -> np.ndarray:
    x1 = np.atleast_2d(np.asarray(x1, dtype=float))
    x2 = np.atleast_2d(np.asarray(x2, dtype=float))
    if x1.shape[1] != hyper.dim or x2.shape[1] != hyper.dim:
        raise DimensionMismatch(
            f"inputs have dim {x1.shape[1]}/{x2.shape[1]}, hyper has {hyper.dim}"
        )
    s1 = x1 / hyper.lengthscales
    s2 = x2 / hyper.lengthscales
    sq = (
        (s1**2).sum(axis=1)[:, None]
        + (s2**2).sum(axis=1)[None, :]
        - 2.0 * (s1 @ s2.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return hyper.signal_var * np.exp(-0.5 * sq)


def kernel_eval(x: np.ndarray, x2: np.ndarray, hyper: GPHyper) -> float:
    x = np.asarray(x, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x.size != x2.size:
        raise DimensionMismatch(f"vector dims differ: {x.size} vs {x2.size}")
    return float(kernel_matrix(x[None, :], x2[None, :], hyper)[0, 0])


def log_marginal_likelihood(
    x: np.ndarray, y: np.ndarray, hyper: GPHyper
) -> tuple[float, np.ndarray]:
    """LML and its gradient over [log lengthscales..., log sig var, log noise var]."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n = x.shape[0]
    if y.size != n:
        raise DimensionMismatch("X rows and y length differ")

    k = kernel_matrix(x, x, hyper)
    sn2 = hyper.noise_var
    f = numerics.cholesky(k + sn2 * np.eye(n))
    alpha = numerics.solve_spd(f, y)
    lml = -0.5 * float(y @ alpha) - 0.5 * f.log_det() - 0.5 * n * np.log(2.0 * np.pi)

    a_inv = numerics.spd_inverse(f)
    w = np.outer(alpha, alpha) - a_inv
    m = w * k

    # d lml / d log(lambda_d) = 0.5 sum_ij W_ij K_ij (x_id - x_jd)^2 / lambda_d^2
    lam = hyper.lengthscales
    mx = m @ x
    rowsum = m.sum(axis=1)
    grad_lam = (rowsum @ (x**2) - np.einsum("nd,nd->d", x, mx)) / lam**2

    grad_sig = 0.5 * float(m.sum())
    grad_noise = 0.5 * sn2 * float(np.trace(w))
    return lml, np.concatenate([grad_lam, [grad_sig, grad_noise]])


@dataclass
class GPModel:
    x: np.ndarray
    y: np.ndarray
    hyper: GPHyper
    chol: CholeskyFactor = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    fit_metadata: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.x.shape[1]


def _build_model(x, y, hyper, fit_metadata=None) -> GPModel:
    n = x.shape[0]
    k = kernel_matrix(x, x, hyper)
    f = numerics.cholesky(k + hyper.noise_var * np.eye(n))
    alpha = numerics.solve_spd(f, y)
    return GPModel(
        x=x, y=y, hyper=hyper, chol=f, alpha=alpha, fit_metadata=fit_metadata or {}
    )


def fit(
    x: np.ndarray,
    y: np.ndarray,
    init: GPHyper | None = None,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
    lr: float = DEFAULT_LR,
    signal_floor: float | None = None,
    lengthscale_cap: np.ndarray | float | None = None,
) -> GPModel:
    """Maximize the marginal likelihood with Adam over log hyperparameters.

    Deterministic given the init; stops when the best LML has not improved by
    more than tol * (1 + |lml|) over the last 10 iterations, or at max_iters.
    The noise variance is floored at 1e-6; pass signal_floor to also keep the
    signal variance from shrinking below a minimum, and lengthscale_cap
    (scalar or per-dimension) to keep lengthscales from growing without bound
    on dimensions that do not explain the targets. Both constraints are
    applied by projection after each step. Training sets beyond the 4096-point
    cap are uniformly subsampled in time order; beyond the 1024-point
    hyperparameter cap the marginal-likelihood ascent runs on a uniform
    subsample (each iteration is cubic in N) while the returned posterior
    still conditions on every retained point.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if x.shape[0] != y.size:
        raise DimensionMismatch("X rows and y length differ")
    if x.shape[0] > TRAINING_CAP:
        idx = np.unique(np.round(np.linspace(0, x.shape[0] - 1, TRAINING_CAP)).astype(int))
        x, y = x[idx], y[idx]
    if x.shape[0] > HYPEROPT_CAP:
        idx = np.unique(np.round(np.linspace(0, x.shape[0] - 1, HYPEROPT_CAP)).astype(int))
        x_opt, y_opt = x[idx], y[idx]
    else:
        x_opt, y_opt = x, y

    hyper = init if init is not None else GPHyper.default(x.shape[1])
    theta = hyper.to_vector()
    log_floor = np.log(NOISE_FLOOR)
    log_signal_floor = np.log(signal_floor) if signal_floor else -np.inf
    theta[-2] = max(theta[-2], log_signal_floor)
    if lengthscale_cap is not None:
        log_cap = np.log(np.broadcast_to(np.asarray(lengthscale_cap, dtype=float), (x.shape[1],)))
        theta[:-2] = np.minimum(theta[:-2], log_cap)
    else:
        log_cap = None

    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    beta1, beta2, eps = 0.9, 0.999, 1e-8

    best_lml = -np.inf
    best_theta = theta.copy()
    stall = 0
    iters_run = 0
    for t in range(1, max_iters + 1):
        lml, grad = log_marginal_likelihood(x_opt, y_opt, GPHyper.from_vector(theta))
        if not np.isfinite(lml):
            raise DivergedOptimization(f"non-finite marginal likelihood at iter {t}")
        iters_run = t
        if lml > best_lml + tol * (1.0 + abs(lml)):
            best_lml, best_theta, stall = lml, theta.copy(), 0
        else:
            if lml > best_lml:
                best_lml, best_theta = lml, theta.copy()
            stall += 1
            if stall >= 10:
                break
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad * grad
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        theta = theta + lr * mhat / (np.sqrt(vhat) + eps)  # ascent
        theta[-1] = max(theta[-1], log_floor)
        theta[-2] = max(theta[-2], log_signal_floor)
        if log_cap is not None:
            theta[:-2] = np.minimum(theta[:-2], log_cap)

    hyper = GPHyper.from_vector(best_theta)
    return _build_model(
        x, y, hyper, fit_metadata={"iterations": iters_run, "lml": best_lml}
    )


def predict(model: GPModel, xstar: np.ndarray) -> tuple[float, float]:
    """Posterior predictive mean and variance at a single query point."""
    mu, s2 = predict_batch(model, np.asarray(xstar, dtype=float)[None, :])
    return float(mu[0]), float(s2[0])


def predict_batch(model: GPModel, xstar: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xstar = np.atleast_2d(np.asarray(xstar, dtype=float))
    if xstar.shape[1] != model.dim:
        raise DimensionMismatch(
            f"query dim {xstar.shape[1]} does not match model dim {model.dim}"
        )
    kstar = kernel_matrix(model.x, xstar, model.hyper)  # (N, M)
    mu = kstar.T @ model.alpha
    vmat = numerics.solve_lower(model.chol, kstar)
    sigma2 = model.hyper.signal_var - (vmat**2).sum(axis=0)
    cap = model.hyper.signal_var + model.hyper.noise_var
    return mu, np.clip(sigma2, 0.0, cap)


FORMAT_VERSION = 1


def save_gp(model: GPModel, path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "d": model.dim,
        "n": int(model.x.shape[0]),
        "x": model.x.tolist(),
        "y": model.y.tolist(),
        "log_hyper": model.hyper.to_vector().tolist(),
        "fit_metadata": model.fit_metadata,
    }
    Path(path).write_text(json.dumps(doc))


def load_gp(path) -> GPModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported GP checkpoint version {doc.get('format_version')}")
    x = np.asarray(doc["x"], dtype=float).reshape(doc["n"], doc["d"])
    y = np.asarray(doc["y"], dtype=float)
    hyper = GPHyper.from_vector(np.asarray(doc["log_hyper"], dtype=float))
    return _build_model(x, y, hyper, fit_metadata=doc.get("fit_metadata", {}))
