"""Feed-forward noise-prediction network with analytic gradients and Adam."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import DimensionMismatch, EmptyBatch, InvalidDim, ShapeMismatch, ValidationError


def time_embedding(t, T: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding of step ``t`` (scalar or array) out of ``T``.

    Interleaved pairs ``(sin(w_r t/T), cos(w_r t/T))`` with
    ``w_r = T * 10000**(-r/(dim/2))``, i.e. the usual transformer frequencies
    expressed on the normalized step.
    """
    if dim < 2 or dim % 2:
        raise InvalidDim(f"embedding dim must be even and positive, got {dim}")
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0) or np.any(t > T):
        raise ValidationError(f"step outside [0, {T}]")
    half = dim // 2
    omega = T * 10000.0 ** (-np.arange(half) / half)
    ang = (t[..., None] / T) * omega
    out = np.empty(t.shape + (dim,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


def embedding_table(T: int, dim: int) -> np.ndarray:
    """Rows 0..T of :func:`time_embedding`."""
    return time_embedding(np.arange(T + 1), T, dim)


def param_count(sizes) -> int:
    return int(sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:])))


class DenoiserNet:
    """MLP mapping ``[x_t | cond | temb]`` to a noise estimate of size ``x_dim``.

    ``hidden=()`` gives a single affine layer, which the closed-form tests
    and hand-built models rely on.
    """

    def __init__(self, x_dim, cond_dim, embed_dim=16, hidden=(64, 64), params=None, seed=0):
        if x_dim < 1 or cond_dim < 0 or embed_dim < 0:
            raise ValidationError("invalid network dimensions")
        self.x_dim = int(x_dim)
        self.cond_dim = int(cond_dim)
        self.embed_dim = int(embed_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.sizes = np.array(
            (self.input_dim, *self.hidden, self.x_dim), dtype=np.int64
        )
        n = param_count(self.sizes)
        if params is None:
            params = self._init_params(np.random.default_rng(seed))
        params = np.ascontiguousarray(params, dtype=np.float64)
        if params.shape != (n,):
            raise ShapeMismatch(f"expected {n} parameters, got {params.shape}")
        self.params = params

    @property
    def input_dim(self) -> int:
        return self.x_dim + self.cond_dim + self.embed_dim

    @property
    def n_params(self) -> int:
        return self.params.size

    def _init_params(self, rng):
        chunks = []
        for nin, nout in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / np.sqrt(nin)
            chunks.append(rng.uniform(-bound, bound, size=nin * nout))
            chunks.append(rng.uniform(-bound, bound, size=nout))
        return np.concatenate(chunks)

    def layers(self):
        """``[(W, b), ...]`` as views into :attr:`params`."""
        from ._kernels_py import layer_views

        return layer_views(self.params, self.sizes)

    def copy(self) -> "DenoiserNet":
        return DenoiserNet(self.x_dim, self.cond_dim, self.embed_dim, self.hidden,
                           params=self.params.copy())

    def _inputs(self, x_t, cond, temb):
        x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
        n = x_t.shape[0]
        cond = np.asarray(cond, dtype=np.float64).reshape(-1, self.cond_dim) if self.cond_dim else np.zeros((n, 0))
        temb = np.asarray(temb, dtype=np.float64)
        if temb.ndim == 1:
            temb = np.broadcast_to(temb, (n, temb.shape[0]))
        if cond.shape[0] == 1 and n > 1:
            cond = np.broadcast_to(cond, (n, self.cond_dim))
        if x_t.shape[1] != self.x_dim or cond.shape != (n, self.cond_dim) or temb.shape != (n, self.embed_dim):
            raise DimensionMismatch(
                f"net expects x:{self.x_dim} cond:{self.cond_dim} temb:{self.embed_dim}, got "
                f"{x_t.shape}, {cond.shape}, {temb.shape}"
            )
        return np.concatenate([x_t, cond, temb], axis=1)

    def forward(self, x_t, cond, temb) -> np.ndarray:
        single = np.ndim(x_t) == 1
        out = kernels.mlp_forward(self.params, self.sizes, self._inputs(x_t, cond, temb))
        return out[0] if single else out

    __call__ = forward

    def loss_and_grad(self, x_t, cond, temb, eps_target):
        """Batch mean of ``||eps_target - forward(...)||^2`` and its gradient."""
        X = self._inputs(x_t, cond, temb)
        if X.shape[0] == 0:
            raise EmptyBatch("loss over an empty batch")
        target = np.asarray(eps_target, dtype=np.float64).reshape(X.shape[0], self.x_dim)
        return kernels.mlp_loss_grad(self.params, self.sizes, X, target)

    def to_dict(self) -> dict:
        return {
            "x_dim": self.x_dim,
            "cond_dim": self.cond_dim,
            "embed_dim": self.embed_dim,
            "hidden": list(self.hidden),
            "params": self.params.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "DenoiserNet":
        return cls(d["x_dim"], d["cond_dim"], d["embed_dim"], tuple(d["hidden"]),
                   params=np.asarray(d["params"], dtype=np.float64))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), **kw)


def optimizer_step(state: AdamState, params, grads):
    """Bias-corrected adaptive-moment update; returns new ``(params, state)``."""
    params = np.array(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if not (params.shape == grads.shape == state.m.shape == state.v.shape):
        raise ShapeMismatch("params, grads and moment vectors must share a shape")
    new = replace(state, m=state.m.copy(), v=state.v.copy(), step=state.step + 1)
    kernels.adam_update(params, np.ascontiguousarray(grads), new.m, new.v, new.step,
                        new.lr, new.beta1, new.beta2, new.eps)
    return params, new
