"""Risk scoring and the pause/label/resume state machine.

The per-frame path is: encode the frame, append the normalized time to get
the 13-dimensional observation, query the GP posterior, then
r = clip(mu + sigma) and flag = (r > tau) with tau strictly exceeded. A
reconstruction-reliability bit is attached so the UI can mark verdicts that
may be false alarms from poor encoding; it never vetoes the flag.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from . import encoder as enc_mod
from . import gp as gp_mod

DEFAULT_TAU = 0.5


class AlphaOutOfRange(Exception):
    pass


class NegativeSigma(Exception):
    pass


class IllegalTransition(Exception):
    pass


LENGTHSCALE_CAP_STDS = 0.25


def train_risk_gp(view, **fit_kwargs):
    """Fit the risk GP on a training view with risk-specific constraints.

    All risk models go through here. The signal variance is floored so the
    far-field predictive std stays above the flag threshold regardless of how
    label-sparse the view is, and lengthscales are initialized at (and capped
    near) the per-dimension data spread so novelty along any latent dimension
    raises the predictive std — marginal likelihood alone would grow the
    lengthscale of every dimension that does not separate the labels,
    blinding the model to out-of-distribution inputs on those dimensions.
    """
    spread = np.maximum(np.asarray(view.x).std(axis=0), 1e-2)
    fit_kwargs.setdefault("signal_floor", gp_mod.RISK_SIGNAL_FLOOR)
    fit_kwargs.setdefault("lengthscale_cap", LENGTHSCALE_CAP_STDS * spread)
    if "init" not in fit_kwargs:
        fit_kwargs["init"] = gp_mod.GPHyper(
            log_lengthscales=np.log(spread),
            log_signal_var=0.0,
            log_noise_var=float(np.log(0.05)),
        )
    return gp_mod.fit(view.x, view.y, **fit_kwargs)


def assemble_observation(h: np.ndarray, alpha: float) -> np.ndarray:
    """Concatenate the latent vector with the normalized time."""
    if not 0.0 <= alpha <= 1.0:
        raise AlphaOutOfRange(f"alpha {alpha} outside [0, 1]")
    h = np.asarray(h, dtype=float).ravel()
    return np.concatenate([h, [float(alpha)]])


def risk_score(mu: float, sigma: float) -> float:
    if sigma < 0:
        raise NegativeSigma(f"sigma {sigma} is negative")
    return min(1.0, max(0.0, mu + sigma))


def risk_flag(r: float, tau: float = DEFAULT_TAU) -> int:
    return 1 if r > tau else 0


@dataclass(frozen=True)
class RiskVerdict:
    r: float
    mu: float
    sigma: float
    flag: int
    recon_unreliable: bool = False
    frame_index: int = 0

    def to_json(self) -> dict:
        return {
            "frame_index": self.frame_index,
            "r": round(self.r, 6),
            "mu": round(self.mu, 6),
            "sigma": round(self.sigma, 6),
            "flag": self.flag,
            "recon_unreliable": bool(self.recon_unreliable),
        }


def evaluate_frame(
    ae, gpm, frame, alpha: float, tau: float = DEFAULT_TAU, frame_index: int = 0
) -> RiskVerdict:
    """Full single-frame path: encode -> observe -> predict -> score -> flag."""
    frame = np.asarray(frame, dtype=float)
    h = enc_mod.encode(ae, frame)
    _, loss = enc_mod.reconstruct(ae, frame)
    o = assemble_observation(h, alpha)
    mu, sigma2 = gp_mod.predict(gpm, o)
    sigma = float(np.sqrt(sigma2))
    r = risk_score(mu, sigma)
    return RiskVerdict(
        r=r,
        mu=float(mu),
        sigma=sigma,
        flag=risk_flag(r, tau),
        recon_unreliable=enc_mod.reconstruction_unreliable(ae, loss),
        frame_index=frame_index,
    )


class Phase(str, Enum):
    RUNNING = "RUNNING"
    PAUSED_AWAITING_LABEL = "PAUSED_AWAITING_LABEL"
    RESUMED = "RESUMED"
    COMPLETED = "COMPLETED"


@dataclass(frozen=True)
class ExecutionState:
    phase: Phase = Phase.RUNNING
    pending_frame: int | None = None

    def __post_init__(self):
        has_pending = self.pending_frame is not None
        if has_pending != (self.phase == Phase.PAUSED_AWAITING_LABEL):
            raise IllegalTransition(
                "pending_frame must be set exactly while paused awaiting a label"
            )


def step_execution(state: ExecutionState, verdict: RiskVerdict) -> ExecutionState:
    """Advance the live state machine by one verdict.

    A raised flag pauses execution pending a supervisor label; stepping while
    paused or after completion is illegal.
    """
    if state.phase not in (Phase.RUNNING, Phase.RESUMED):
        raise IllegalTransition(f"cannot step while {state.phase.value}")
    if verdict.flag:
        return ExecutionState(
            phase=Phase.PAUSED_AWAITING_LABEL, pending_frame=verdict.frame_index
        )
    return state


def supply_label(state: ExecutionState) -> ExecutionState:
    """The supervisor assessed the pending fault; execution resumes."""
    if state.phase != Phase.PAUSED_AWAITING_LABEL:
        raise IllegalTransition("no pending label to supply")
    return ExecutionState(phase=Phase.RESUMED, pending_frame=None)


def complete(state: ExecutionState) -> ExecutionState:
    if state.phase == Phase.PAUSED_AWAITING_LABEL:
        raise IllegalTransition("cannot complete while awaiting a label")
    return ExecutionState(phase=Phase.COMPLETED, pending_frame=None)


# --- batch estimators over whole episodes ----------------------------------


class _FrameFeatures:
    """Shared latent/reconstruction-loss computation with per-episode caching.

    The cache is keyed by episode_id and is only valid for a single encoder,
    so share one cache between estimators only when they share the AE.
    """

    def __init__(self, ae, cache: dict | None = None):
        self.ae = ae
        self.cache = cache

    def episode_features(self, ep):
        if self.cache is not None and ep.episode_id in self.cache:
            return self.cache[ep.episode_id]
        frames = ep.frames_float()
        feats = (
            enc_mod.encode_batch(self.ae, frames),
            enc_mod.reconstruct_batch(self.ae, frames)[1],
        )
        if self.cache is not None:
            self.cache[ep.episode_id] = feats
        return feats

    def frame_features(self, frames):
        return (
            enc_mod.encode_batch(self.ae, frames),
            enc_mod.reconstruct_batch(self.ae, frames)[1],
        )


class GPRiskEstimator:
    """GP-backed estimator scoring whole episodes in batch (replay mode)."""

    name = "gp"

    def __init__(self, ae, gpm, tau: float = DEFAULT_TAU, feature_cache: dict | None = None):
        self.ae = ae
        self.gpm = gpm
        self.tau = tau
        self._features = _FrameFeatures(ae, feature_cache)

    def _verdicts(self, h, losses, alphas) -> list[RiskVerdict]:
        x = np.column_stack([h, alphas])
        mu, sigma2 = gp_mod.predict_batch(self.gpm, x)
        sigma = np.sqrt(sigma2)
        out = []
        for i in range(h.shape[0]):
            r = risk_score(float(mu[i]), float(sigma[i]))
            out.append(
                RiskVerdict(
                    r=r,
                    mu=float(mu[i]),
                    sigma=float(sigma[i]),
                    flag=risk_flag(r, self.tau),
                    recon_unreliable=enc_mod.reconstruction_unreliable(
                        self.ae, float(losses[i])
                    ),
                    frame_index=i,
                )
            )
        return out

    def score_frames(self, frames: np.ndarray, alphas: np.ndarray) -> list[RiskVerdict]:
        h, losses = self._features.frame_features(frames)
        return self._verdicts(h, losses, alphas)

    def score_episode(self, ep) -> list[RiskVerdict]:
        h, losses = self._features.episode_features(ep)
        return self._verdicts(h, losses, ep.alphas())


class BaselineRiskEstimator:
    """MLP/LR estimator with the same verdict interface; sigma is always 0."""

    def __init__(
        self,
        ae,
        model,
        tau: float = DEFAULT_TAU,
        name: str = "baseline",
        feature_cache: dict | None = None,
    ):
        self.ae = ae
        self.model = model
        self.tau = tau
        self.name = name
        self._features = _FrameFeatures(ae, feature_cache)

    def _verdicts(self, h, losses, alphas) -> list[RiskVerdict]:
        from . import baselines

        x = np.column_stack([h, alphas])
        p = baselines.predict_proba(self.model, x)
        out = []
        for i in range(h.shape[0]):
            r = float(p[i])
            out.append(
                RiskVerdict(
                    r=r,
                    mu=r,
                    sigma=0.0,
                    flag=risk_flag(r, self.tau),
                    recon_unreliable=enc_mod.reconstruction_unreliable(
                        self.ae, float(losses[i])
                    ),
                    frame_index=i,
                )
            )
        return out

    def score_frames(self, frames: np.ndarray, alphas: np.ndarray) -> list[RiskVerdict]:
        h, losses = self._features.frame_features(frames)
        return self._verdicts(h, losses, alphas)

    def score_episode(self, ep) -> list[RiskVerdict]:
        h, losses = self._features.episode_features(ep)
        return self._verdicts(h, losses, ep.alphas())
