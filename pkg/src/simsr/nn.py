"""Small numpy MLPs with hand-written backprop, optimizers and a binary checkpoint format."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"SIMSRPB1"


@dataclass
class MLP:
    """Fully connected net: ReLU on hidden layers, linear output.

    ``params`` holds ``[W0, b0, W1, b1, ...]``; ``W_i`` has shape ``(fan_in, fan_out)``.
    """

    params: list[np.ndarray]

    @classmethod
    def init(cls, sizes, rng: np.random.Generator) -> "MLP":
        params = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            k = 1.0 / np.sqrt(fan_in)
            params.append(rng.uniform(-k, k, size=(fan_in, fan_out)))
            params.append(rng.uniform(-k, k, size=fan_out))
        return cls(params)

    @property
    def sizes(self) -> list[int]:
        return [self.params[0].shape[0]] + [W.shape[1] for W in self.params[::2]]

    @property
    def n_layers(self) -> int:
        return len(self.params) // 2

    def copy(self) -> "MLP":
        return MLP([p.copy() for p in self.params])

    def forward(self, x: np.ndarray):
        """Return ``(output, cache)``; ``cache`` holds each layer's input."""
        inputs = []
        h = x
        for i in range(self.n_layers):
            inputs.append(h)
            h = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < self.n_layers - 1:
                h = np.maximum(h, 0.0)
        return h, inputs

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out: np.ndarray):
        """Gradients of ``sum(grad_out * output)`` w.r.t. params and the input."""
        grads = [None] * len(self.params)
        g = grad_out
        for i in reversed(range(self.n_layers)):
            h_in = cache[i]
            grads[2 * i] = h_in.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.params[2 * i].T
            if i > 0:
                # cached input of layer i is the ReLU output of layer i-1
                g = g * (h_in > 0)
        return grads, g


def zeros_like(params):
    return [np.zeros_like(p) for p in params]


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


class Adam:
    def __init__(self, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        if self.m is None:
            self.m = zeros_like(params)
            self.v = zeros_like(params)
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name: str, lr: float):
    if name == "sgd":
        return SGD(lr)
    if name == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {name!r}")


# Checkpoint layout (all integers little-endian uint32):
#   MAGIC, n_sections
#   per section: name_len, name (utf-8), n_arrays
#   per array:   ndim, dims..., then prod(dims) little-endian float64 values (C order)
def save_sections(path, sections: dict[str, list[np.ndarray]]) -> None:
    out = [MAGIC, struct.pack("<I", len(sections))]
    for name, arrays in sections.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw + struct.pack("<I", len(arrays)))
        for a in arrays:
            a = np.ascontiguousarray(a, dtype="<f8")
            out.append(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
            out.append(a.tobytes())
    Path(path).write_bytes(b"".join(out))


def load_sections(path) -> dict[str, list[np.ndarray]]:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a parameter file")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, data, pos)
        pos += struct.calcsize(fmt)
        return vals

    sections = {}
    (n_sections,) = take("<I")
    for _ in range(n_sections):
        (name_len,) = take("<I")
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (n_arrays,) = take("<I")
        arrays = []
        for _ in range(n_arrays):
            (ndim,) = take("<I")
            shape = take(f"<{ndim}I")
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape)
            pos += 8 * count
            arrays.append(arr.astype(np.float64))
        sections[name] = arrays
    if pos != len(data):
        raise ValueError(f"{path}: trailing bytes")
    return sections


def central_difference(f, params, eps: float = 1e-5):
    """Central finite-difference gradient of scalar ``f()`` w.r.t. each array in ``params``."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            hi = f()
            flat[i] = old - eps
            lo = f()
            flat[i] = old
            gflat[i] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads


def relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    """Largest per-array ``||a - n|| / (||a|| + ||n||)``."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        num = np.linalg.norm(a - n)
        den = max(np.linalg.norm(a) + np.linalg.norm(n), floor)
        worst = max(worst, num / den)
    return worst
