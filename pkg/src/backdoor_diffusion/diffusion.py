"""Noise schedule, denoising objective and deterministic encode/decode."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels
from .errors import DimensionMismatch, EmptyBatch, InvalidRange, StepOutOfRange
from .net import AdamState, DenoiserNet, embedding_table


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray  # beta_1..beta_T
    alpha_bar: np.ndarray  # alpha_bar_0..alpha_bar_T, alpha_bar_0 = 1

    @property
    def T(self) -> int:
        return self.beta.size

    @classmethod
    def from_betas(cls, beta) -> "NoiseSchedule":
        beta = np.asarray(beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 1:
            raise InvalidRange("need at least one step")
        if np.any(beta <= 0) or np.any(beta >= 1):
            raise InvalidRange("every beta must lie in (0, 1)")
        alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - beta)])
        return cls(beta, alpha_bar)

    @property
    def terminal_ok(self) -> bool:
        """Whether the final step is close enough to pure noise for sampling."""
        return bool(self.alpha_bar[-1] < 0.01)

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist()}


def linear_schedule(T: int = 100, beta_min: float = 1e-4, beta_max: float = 0.15) -> NoiseSchedule:
    if T < 2:
        raise InvalidRange("T must be at least 2")
    if not (0 < beta_min <= beta_max < 1):
        raise InvalidRange("need 0 < beta_min <= beta_max < 1")
    return NoiseSchedule.from_betas(np.linspace(beta_min, beta_max, T))


def forward_noising(x0, t: int, eps, schedule: NoiseSchedule):
    if not 1 <= t <= schedule.T:
        raise StepOutOfRange(f"step {t} outside 1..{schedule.T}")
    a = schedule.alpha_bar[t]
    return np.sqrt(a) * np.asarray(x0) + np.sqrt(1.0 - a) * np.asarray(eps)


@lru_cache(maxsize=32)
def _temb(T, dim):
    tab = embedding_table(T, dim) if dim else np.zeros((T + 1, 0))
    tab.setflags(write=False)
    return tab


def temb_table(schedule: NoiseSchedule, net: DenoiserNet) -> np.ndarray:
    return _temb(schedule.T, net.embed_dim)


def _as_rows(x, width, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1) if width else x.reshape(-1, 0)
    if x.shape[1] != width:
        raise DimensionMismatch(f"{name} has width {x.shape[1]}, expected {width}")
    return np.ascontiguousarray(x)


def training_batch_loss(net: DenoiserNet, x0, cond, schedule: NoiseSchedule, seed):
    """Monte-Carlo estimate of the denoising loss and its gradient.

    Each row gets its own step ``t ~ U{1..T}`` and noise ``eps ~ N(0, I)``
    drawn from ``seed``.
    """
    x0 = _as_rows(x0, net.x_dim, "x0")
    n = x0.shape[0]
    if n == 0:
        raise EmptyBatch("empty training batch")
    cond = _as_rows(cond, net.cond_dim, "cond") if net.cond_dim else np.zeros((n, 0))
    rng = np.random.default_rng(seed)
    t = rng.integers(1, schedule.T + 1, size=n)
    eps = rng.standard_normal((n, net.x_dim))
    a = schedule.alpha_bar[t][:, None]
    x_t = np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps
    return net.loss_and_grad(x_t, cond, temb_table(schedule, net)[t], eps)


def _prep(net, x, cond):
    single = np.ndim(x) == 1
    x = _as_rows(x, net.x_dim, "x")
    n = x.shape[0]
    if net.cond_dim:
        cond = _as_rows(cond, net.cond_dim, "cond")
        if cond.shape[0] == 1 and n > 1:
            cond = np.repeat(cond, n, axis=0)
        if cond.shape[0] != n:
            raise DimensionMismatch("cond rows do not match x rows")
    else:
        cond = np.zeros((n, 0))
    return single, x, cond


def ddim_encode(net: DenoiserNet, x0, cond, schedule: NoiseSchedule):
    """Deterministic map from data to latent, steps t = 0..T-1."""
    single, x, cond = _prep(net, x0, cond)
    z = kernels.ddim_encode(net.params, net.sizes, x, cond, schedule.alpha_bar,
                            temb_table(schedule, net))
    return z[0] if single else z


def ddim_decode(net: DenoiserNet, z, cond, schedule: NoiseSchedule):
    """Deterministic map from latent back to data, steps t = T..1."""
    single, x, cond = _prep(net, z, cond)
    out = kernels.ddim_decode(net.params, net.sizes, x, cond, schedule.alpha_bar,
                              temb_table(schedule, net))
    return out[0] if single else out


def train_denoiser(net: DenoiserNet, x0, cond, schedule: NoiseSchedule, *, epochs=200,
                   batch=64, lr=1e-3, beta1=0.9, beta2=0.999, guard=1e-8, seed=0,
                   lr_schedule="constant"):
    """Fit ``net`` in place on rows ``(x0, cond)``; returns per-epoch mean losses.

    Each epoch draws a fresh permutation, steps and noise from one generator
    seeded by ``seed`` so results do not depend on the kernel backend's
    scheduling. ``lr_schedule="cosine"`` anneals the step size per epoch
    from ``lr`` towards zero, which removes most of the final-iterate noise.
    """
    if lr_schedule not in ("constant", "cosine"):
        raise InvalidRange(f"unknown lr_schedule {lr_schedule!r}")
    x0 = _as_rows(x0, net.x_dim, "x0")
    n = x0.shape[0]
    if n == 0:
        raise EmptyBatch("no training rows")
    cond = _as_rows(cond, net.cond_dim, "cond") if net.cond_dim else np.zeros((n, 0))
    rng = np.random.default_rng(seed)
    state = AdamState.zeros(net.n_params, lr=lr, beta1=beta1, beta2=beta2, eps=guard)
    temb = temb_table(schedule, net)
    history = []
    step = 0
    for e in range(epochs):
        lr_e = lr if lr_schedule == "constant" else lr * 0.5 * (1.0 + np.cos(np.pi * e / epochs))
        order = rng.permutation(n)
        t = rng.integers(1, schedule.T + 1, size=n)
        eps = rng.standard_normal((n, net.x_dim))
        loss, step = kernels.train_epoch(
            net.params, net.sizes, state.m, state.v, step, x0, cond, t, eps, order,
            schedule.alpha_bar, temb, int(batch), lr_e, beta1, beta2, guard,
        )
        history.append(float(loss))
    return history
