"""Per-parameter update rules: SGDM, Adam, AdamW, Muon and Conda.

Every stepper has the signature ``step(w, g, slot, cfg) -> (w_new, report)``.
``slot`` is mutated in place; ``w`` is never modified. ``report.update_matrix``
is the direction the weights move along before the ``-lr`` factor is applied
(it includes the scale factor, excludes weight decay).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import linalg
from .errors import ConfigError, NonFiniteError, RankDeficientError, ShapeError

RANK_TOL = 1e-12


def _is_posint(x) -> bool:
    return isinstance(x, (int, np.integer)) and not isinstance(x, bool) and x >= 1


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.99
    mu: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.0
    update_freq: int = 2000
    scale: float = 0.25
    ns_steps: int = 5
    ns_coefficients: tuple = linalg.NS_COEFFICIENTS
    bias_correction: bool = True
    projection_ablation: bool = False

    def __post_init__(self):
        checks = [
            (self.lr > 0, "lr must be > 0"),
            (0 <= self.beta1 < 1, "beta1 must be in [0, 1)"),
            (0 <= self.beta2 < 1, "beta2 must be in [0, 1)"),
            (0 <= self.mu < 1, "mu must be in [0, 1)"),
            (self.eps > 0, "eps must be > 0"),
            (self.weight_decay >= 0, "weight_decay must be >= 0"),
            (_is_posint(self.update_freq), "update_freq must be a positive integer"),
            (self.scale > 0, "scale must be > 0"),
            (_is_posint(self.ns_steps), "ns_steps must be a positive integer"),
            (len(self.ns_coefficients) == 3, "ns_coefficients must have three entries"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        object.__setattr__(self, "ns_coefficients", tuple(float(c) for c in self.ns_coefficients))

    def replace(self, **changes) -> "OptimizerConfig":
        return dataclasses.replace(self, **changes)


# Defaults reported for pre-training (lr 0.01, betas (0.9, 0.99), T 2000, scale 0.25)
# and for LoRA fine-tuning (scale 1.0, T 200).
PRETRAIN_DEFAULTS = OptimizerConfig()
FINETUNE_DEFAULTS = OptimizerConfig(scale=1.0, update_freq=200)


@dataclass
class ParamSlot:
    """Optimizer state for one parameter."""

    shape: tuple
    step_count: int = 0
    first_moment: np.ndarray = None
    second_moment: Optional[np.ndarray] = None
    cached_basis: Optional[np.ndarray] = None
    projection_side: str = "none"
    pin_basis: bool = False

    def __post_init__(self):
        self.shape = tuple(self.shape)
        if self.first_moment is None:
            self.first_moment = np.zeros(self.shape)


@dataclass
class StepReport:
    update_matrix: np.ndarray
    basis_refreshed: bool = False


MATRIX_OPTIMIZERS = ("muon_ns", "muon_svd", "conda")


def new_slot(shape, optimizer: str = "adam") -> ParamSlot:
    """Fresh state for a parameter of ``shape`` stepped by ``optimizer``.

    Muon and Conda only accept 2D parameters.
    """
    shape = tuple(int(s) for s in shape)
    if optimizer in MATRIX_OPTIMIZERS and (len(shape) != 2 or min(shape) < 1):
        raise ShapeError(f"{optimizer} requires a 2D parameter, got shape {shape}")
    side = "none"
    if optimizer == "conda":
        side = "left" if shape[0] <= shape[1] else "right"
    return ParamSlot(shape=shape, projection_side=side)


def pin_identity_basis(slot: ParamSlot) -> ParamSlot:
    """Test hook: fix a Conda slot's basis to the identity and disable refreshes."""
    m, n = slot.shape
    k = min(m, n)
    slot.cached_basis = np.eye(m, k) if slot.projection_side == "left" else np.eye(k, n)
    slot.pin_basis = True
    return slot


def _check(w, g, slot: ParamSlot):
    w = np.asarray(w, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if w.shape != g.shape or w.shape != slot.shape:
        raise ShapeError(f"shape mismatch: w {w.shape}, g {g.shape}, slot {slot.shape}")
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("non-finite gradient")
    return w, g


def _bias_corrections(cfg: OptimizerConfig, t: int) -> tuple[float, float]:
    if not cfg.bias_correction:
        return 1.0, 1.0
    return 1.0 - cfg.beta1**t, 1.0 - cfg.beta2**t


def sgdm_step(w, g, slot: ParamSlot, cfg: OptimizerConfig):
    w, g = _check(w, g, slot)
    slot.step_count += 1
    slot.first_moment = cfg.mu * slot.first_moment + g
    update = slot.first_moment.copy()
    return w - cfg.lr * update, StepReport(update)


def _adam_direction(g, slot: ParamSlot, cfg: OptimizerConfig) -> np.ndarray:
    slot.step_count += 1
    t = slot.step_count
    if slot.second_moment is None:
        slot.second_moment = np.zeros(slot.shape)
    slot.first_moment = cfg.beta1 * slot.first_moment + (1.0 - cfg.beta1) * g
    slot.second_moment = cfg.beta2 * slot.second_moment + (1.0 - cfg.beta2) * (g * g)
    bc1, bc2 = _bias_corrections(cfg, t)
    return (slot.first_moment / bc1) / (np.sqrt(slot.second_moment / bc2) + cfg.eps)


def adam_step(w, g, slot: ParamSlot, cfg: OptimizerConfig):
    w, g = _check(w, g, slot)
    update = _adam_direction(g, slot, cfg)
    return w - cfg.lr * update, StepReport(update)


def adamw_step(w, g, slot: ParamSlot, cfg: OptimizerConfig):
    w, g = _check(w, g, slot)
    update = _adam_direction(g, slot, cfg)
    w = w - cfg.lr * update
    if cfg.weight_decay > 0.0:
        w = w - cfg.lr * cfg.weight_decay * w
    return w, StepReport(update)


def muon_step_ns(w, g, slot: ParamSlot, cfg: OptimizerConfig):
    w, g = _check(w, g, slot)
    slot.step_count += 1
    slot.first_moment = cfg.mu * slot.first_moment + g
    update = cfg.scale * linalg.newton_schulz5(slot.first_moment, cfg.ns_steps, cfg.ns_coefficients)
    return w - cfg.lr * update, StepReport(update)


def muon_svd_direction(m_t, side: Optional[str] = None) -> np.ndarray:
    """Polar factor of ``m_t`` via the SVD reformulation of Muon.

    ``side`` defaults to ``"left"`` when rows <= cols, else ``"right"``.
    Order matters: matrix product, then element-wise division, then the
    remaining product.
    """
    m_t = linalg.as_matrix(m_t, "momentum")
    rows, cols = m_t.shape
    f = linalg.thin_svd(m_t)
    if f.sigma[0] == 0.0 or f.sigma[-1] < RANK_TOL * f.sigma[0]:
        raise RankDeficientError("rank-deficient momentum")
    if side is None:
        side = "left" if rows <= cols else "right"
    if side == "left":
        projected = f.u.T @ m_t  # k x n
        denom = np.outer(f.sigma, np.ones(cols))
        return f.u @ (projected / denom)
    if side == "right":
        v = f.vt.T
        projected = m_t @ v  # m x k
        denom = np.outer(np.ones(rows), f.sigma)
        return (projected / denom) @ f.vt
    raise ValueError(f"unknown side {side!r}")


def muon_step_svd(w, g, slot: ParamSlot, cfg: OptimizerConfig):
    w, g = _check(w, g, slot)
    slot.step_count += 1
    slot.first_moment = cfg.mu * slot.first_moment + g
    update = cfg.scale * muon_svd_direction(slot.first_moment)
    return w - cfg.lr * update, StepReport(update)


def _refresh_basis(slot: ParamSlot):
    f = linalg.thin_svd(slot.first_moment)
    slot.cached_basis = f.u if slot.projection_side == "left" else f.vt


def conda_step(w, g, slot: ParamSlot, cfg: OptimizerConfig):
    """Column-normalized Adam.

    The basis is refreshed from the SVD of the first moment whenever
    ``(t - 1) % update_freq == 0``, i.e. on steps 1, 1 + T, 1 + 2T, ...
    The second moment is kept across refreshes.
    """
    w, g = _check(w, g, slot)
    if slot.projection_side not in ("left", "right"):
        raise ShapeError("conda_step needs a slot created for 'conda'")
    slot.step_count += 1
    t = slot.step_count
    slot.first_moment = cfg.beta1 * slot.first_moment + (1.0 - cfg.beta1) * g

    refreshed = False
    if not slot.pin_basis and ((t - 1) % cfg.update_freq == 0 or slot.cached_basis is None):
        _refresh_basis(slot)
        refreshed = True
    p = slot.cached_basis
    left = slot.projection_side == "left"

    m_proj = p.T @ slot.first_moment if left else slot.first_moment @ p.T
    if cfg.projection_ablation:
        g2 = g * g
    else:
        g_proj = p.T @ g if left else g @ p.T
        g2 = g_proj * g_proj
    if slot.second_moment is None:
        slot.second_moment = np.zeros_like(g2)
    slot.second_moment = cfg.beta2 * slot.second_moment + (1.0 - cfg.beta2) * g2

    bc1, bc2 = _bias_corrections(cfg, t)
    m_hat = m_proj / bc1
    denom = np.sqrt(slot.second_moment / bc2) + cfg.eps
    if cfg.projection_ablation:
        back = p @ m_hat if left else m_hat @ p
        direction = back / denom
    else:
        direction = p @ (m_hat / denom) if left else (m_hat / denom) @ p

    update = cfg.scale * direction
    w = w - cfg.lr * update
    if cfg.weight_decay > 0.0:
        w = w - cfg.lr * cfg.weight_decay * w
    return w, StepReport(update, basis_refreshed=refreshed)


STEPPERS: dict[str, Callable] = {
    "sgdm": sgdm_step,
    "adam": adam_step,
    "adamw": adamw_step,
    "muon_ns": muon_step_ns,
    "muon_svd": muon_step_svd,
    "conda": conda_step,
}


def muon_columnwise_direction(m_t) -> np.ndarray:
    """Slow column-sum form of the Muon direction (test oracle, rows <= cols).

    Column j is ``sum_i (1 / sigma_i) u_i u_i^T m_t[:, j]``.
    """
    m_t = linalg.as_matrix(m_t, "momentum")
    rows, cols = m_t.shape
    if rows > cols:
        raise ShapeError("columnwise Muon form needs rows <= cols")
    f = linalg.thin_svd(m_t)
    if f.sigma[0] == 0.0 or f.sigma[-1] < RANK_TOL * f.sigma[0]:
        raise RankDeficientError("rank-deficient momentum")
    out = np.zeros_like(m_t)
    for j in range(cols):
        col = np.zeros(rows)
        for i in range(f.u.shape[1]):
            u_i = f.u[:, i]
            col += (1.0 / f.sigma[i]) * (np.outer(u_i, u_i) @ m_t[:, j])
        out[:, j] = col
    return out


def conda_columnwise_direction(m_t, n_t, u) -> np.ndarray:
    """Slow column-sum form of the Conda direction (test oracle).

    Column j is ``sum_i (1 / sqrt(n_t[i, j])) u_i u_i^T m_t[:, j]``.
    """
    m_t = np.asarray(m_t, dtype=np.float64)
    n_t = np.asarray(n_t, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    rows, cols = m_t.shape
    k = u.shape[1]
    if u.shape[0] != rows or n_t.shape != (k, cols):
        raise ShapeError(f"inconsistent shapes: m {m_t.shape}, n {n_t.shape}, u {u.shape}")
    if np.any(n_t <= 0):
        raise ValueError("nonpositive second-moment entry")
    out = np.zeros_like(m_t)
    for j in range(cols):
        col = np.zeros(rows)
        for i in range(k):
            u_i = u[:, i]
            col += (1.0 / np.sqrt(n_t[i, j])) * (np.outer(u_i, u_i) @ m_t[:, j])
        out[:, j] = col
    return out
