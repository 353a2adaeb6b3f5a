"""Observation encoder with unit-norm output, its momentum twin, and cosine distances."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from simsr.nn import MLP, load_sections, save_sections

UNIT_ATOL = 1e-5
DEGENERATE_NORM = 1e-12


class DegenerateInputError(ValueError):
    """The pre-normalisation activation has (near) zero norm."""


@dataclass
class Encoder:
    """MLP ``obs_dim -> hidden (ReLU) -> ... -> latent_dim`` followed by L2 normalisation."""

    mlp: MLP

    @classmethod
    def init(cls, obs_dim: int, latent_dim: int = 50, hidden=(64, 64), seed: int = 0) -> "Encoder":
        rng = np.random.default_rng(seed)
        return cls(MLP.init([obs_dim, *hidden, latent_dim], rng))

    @property
    def params(self) -> list[np.ndarray]:
        return self.mlp.params

    @property
    def obs_dim(self) -> int:
        return self.mlp.sizes[0]

    @property
    def latent_dim(self) -> int:
        return self.mlp.sizes[-1]

    def copy(self) -> "Encoder":
        return Encoder(self.mlp.copy())

    def forward(self, obs: np.ndarray):
        """Encode a batch ``(n, obs_dim)``; returns ``(z, cache)`` for :func:`encode_backward`."""
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        if obs.shape[1] != self.obs_dim:
            raise ValueError(f"expected observations of size {self.obs_dim}, got {obs.shape[1]}")
        h, mlp_cache = self.mlp.forward(obs)
        norms = np.linalg.norm(h, axis=1, keepdims=True)
        if np.any(norms <= DEGENERATE_NORM):
            raise DegenerateInputError("encoder pre-normalisation output has zero norm")
        z = h / norms
        return z, (mlp_cache, z, norms)

    def __call__(self, obs):
        """Encode one observation or a batch."""
        z = self.forward(obs)[0]
        return z[0] if np.ndim(obs) == 1 else z


def encode(params: Encoder, obs) -> np.ndarray:
    return params(obs)


def encode_backward(params: Encoder, cache, grad_z: np.ndarray, return_input_grad: bool = False):
    """Parameter gradients of ``sum(grad_z * z)`` through the normalisation and the MLP."""
    mlp_cache, z, norms = cache
    # Jacobian of h / |h| is (I - z z^T) / |h|: the radial part of grad_z is dropped.
    radial = np.sum(grad_z * z, axis=1, keepdims=True)
    grad_h = (grad_z - radial * z) / norms
    grads, grad_in = params.mlp.backward(mlp_cache, grad_h)
    return (grads, grad_in) if return_input_grad else grads


def _check_unit(u, name):
    n = np.linalg.norm(u, axis=-1)
    if np.any(np.abs(n - 1.0) > UNIT_ATOL):
        raise ValueError(f"{name} must be unit-norm (got norm {n})")


def cos_distance(u, v) -> float:
    """``1 - u.v`` for unit vectors; in [0, 2]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _check_unit(u, "u")
    _check_unit(v, "v")
    return float(np.clip(1.0 - u @ v, 0.0, 2.0))


def cos_distance_matrix(A, B) -> np.ndarray:
    """Pairwise ``1 - A_i . B_j`` for row-normalised batches."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    _check_unit(A, "A")
    _check_unit(B, "B")
    return np.clip(1.0 - A @ B.T, 0.0, 2.0)


def cos_distance_unnormalized(A, B) -> np.ndarray:
    """Cosine distance matrix for arbitrary non-zero rows.

    Only the latent-dynamics target uses this: sampled next latents are off the sphere.
    """
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    A = A / np.linalg.norm(A, axis=1, keepdims=True)
    B = B / np.linalg.norm(B, axis=1, keepdims=True)
    return np.clip(1.0 - A @ B.T, 0.0, 2.0)


@dataclass
class EncoderPair:
    """Online encoder and its exponential-moving-average target.

    ``momentum`` is the weight kept on the old target; the usual ``tau`` equals ``1 - momentum``.
    """

    online: Encoder
    momentum: float = 0.95
    target: Encoder = field(default=None)

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.target is None:
            self.target = self.online.copy()
        elif [p.shape for p in self.target.params] != [p.shape for p in self.online.params]:
            raise ValueError("online and target encoders differ in shape")


def ema_update(pair: EncoderPair) -> EncoderPair:
    m = pair.momentum
    for t, o in zip(pair.target.params, pair.online.params):
        t[...] = m * t + (1 - m) * o
    return pair


def save_encoder_pair(pair: EncoderPair, path) -> None:
    save_sections(
        path,
        {
            "encoder.online": pair.online.params,
            "encoder.target": pair.target.params,
            "encoder.momentum": [np.array([pair.momentum])],
        },
    )


def encoder_pair_from_sections(sections) -> EncoderPair:
    online = Encoder(MLP([a.copy() for a in sections["encoder.online"]]))
    target = Encoder(MLP([a.copy() for a in sections["encoder.target"]]))
    return EncoderPair(online, float(sections["encoder.momentum"][0][0]), target)


def load_encoder_pair(path) -> EncoderPair:
    return encoder_pair_from_sections(load_sections(path))
