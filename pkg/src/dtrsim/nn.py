"""Small numpy multilayer perceptron with reverse-mode gradients and Adam.

Hidden layers are ``linear -> [batch norm] -> relu -> [dropout]``; the output
layer is linear. Parameters live in a flat list of arrays so optimisers,
target-network updates and checkpoints can treat every network alike.

Checkpoint layout (all integers little-endian):

    bytes 0-4    magic b"DTRNN"
    u32          format version (1)
    u32          length n of the JSON header
    n bytes      UTF-8 JSON header: {"arrays": [{"name", "shape"}...], "meta": {...}}
    ...          each array as float64 little-endian, C order, in header order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DTRNN"
FORMAT_VERSION = 1
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class Mlp:
    """Feedforward network ``sizes[0] -> ... -> sizes[-1]``."""

    def __init__(self, sizes, batch_norm: bool = False, dropout: float = 0.0,
                 rng: np.random.Generator | None = None):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError("need at least input and output sizes, all >= 1")
        if not 0.0 <= dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        self.sizes = sizes
        self.batch_norm = bool(batch_norm)
        self.dropout = float(dropout)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: list[np.ndarray] = []
        self.names: list[str] = []
        for k, (m, n) in enumerate(zip(sizes[:-1], sizes[1:])):
            # He initialisation for the relu layers
            self._add(f"W{k}", rng.normal(0.0, np.sqrt(2.0 / m), size=(m, n)))
            self._add(f"b{k}", np.zeros(n))
            if self.batch_norm and k < len(sizes) - 2:
                self._add(f"gamma{k}", np.ones(n))
                self._add(f"beta{k}", np.zeros(n))
        self.running = {
            k: [np.zeros(n), np.ones(n)]
            for k, n in enumerate(sizes[1:-1])
        } if self.batch_norm else {}
        self._cache = None

    def _add(self, name, value):
        self.names.append(name)
        self.params.append(np.asarray(value, dtype=np.float64))

    def param(self, name: str) -> np.ndarray:
        return self.params[self.names.index(name)]

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def copy(self) -> "Mlp":
        other = Mlp.__new__(Mlp)
        other.sizes = list(self.sizes)
        other.batch_norm = self.batch_norm
        other.dropout = self.dropout
        other.params = [p.copy() for p in self.params]
        other.names = list(self.names)
        other.running = {k: [m.copy(), v.copy()] for k, (m, v) in self.running.items()}
        other._cache = None
        return other

    # --------------------------------------------------------------- forward
    def forward(self, x, train: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        """Outputs for a single input vector or a batch (rows).

        In training mode batch norm uses batch statistics and dropout is
        applied with ``rng``; the intermediate values are kept for
        :meth:`backward`.
        """
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.ndim != 2 or h.shape[1] != self.sizes[0]:
            raise ValueError(f"expected input width {self.sizes[0]}, got shape {x.shape}")
        if train and self.dropout > 0 and rng is None:
            raise ValueError("dropout in training mode needs an rng")
        cache = []
        last = self.n_layers - 1
        for k in range(self.n_layers):
            W, b = self.param(f"W{k}"), self.param(f"b{k}")
            inp = h
            z = h @ W + b
            rec = {"inp": inp}
            if k == last:
                h = z
                cache.append(rec)
                break
            if self.batch_norm:
                gamma, beta = self.param(f"gamma{k}"), self.param(f"beta{k}")
                if train:
                    mu = z.mean(axis=0)
                    var = z.var(axis=0)
                    rm, rv = self.running[k]
                    rm *= 1 - BN_MOMENTUM
                    rm += BN_MOMENTUM * mu
                    rv *= 1 - BN_MOMENTUM
                    rv += BN_MOMENTUM * var
                else:
                    mu, var = self.running[k]
                inv = 1.0 / np.sqrt(var + BN_EPS)
                zhat = (z - mu) * inv
                rec.update(zhat=zhat, inv=inv)
                z = gamma * zhat + beta
            a = np.maximum(z, 0.0)
            rec["pre"] = z
            if train and self.dropout > 0:
                keep = (rng.random(a.shape) >= self.dropout) / (1.0 - self.dropout)
                a = a * keep
                rec["keep"] = keep
            h = a
            cache.append(rec)
        self._cache = (cache, train)
        return h[0] if single else h

    __call__ = forward

    # -------------------------------------------------------------- backward
    def backward(self, grad_out) -> list[np.ndarray]:
        """Gradients of ``sum(grad_out * output)`` for every parameter.

        Must follow a :meth:`forward` call on the same batch.
        """
        if self._cache is None:
            raise RuntimeError("backward() called before forward()")
        cache, train = self._cache
        g = np.asarray(grad_out, dtype=np.float64)
        if g.ndim == 1:
            g = g[None, :]
        grads = {}
        for k in reversed(range(self.n_layers)):
            rec = cache[k]
            if k != self.n_layers - 1:
                if "keep" in rec:
                    g = g * rec["keep"]
                g = g * (rec["pre"] > 0)
                if self.batch_norm:
                    zhat, inv = rec["zhat"], rec["inv"]
                    gamma = self.param(f"gamma{k}")
                    grads[f"gamma{k}"] = (g * zhat).sum(axis=0)
                    grads[f"beta{k}"] = g.sum(axis=0)
                    gz = g * gamma
                    if train:
                        n = gz.shape[0]
                        g = inv / n * (n * gz - gz.sum(axis=0) - zhat * (gz * zhat).sum(axis=0))
                    else:
                        g = gz * inv
            W = self.param(f"W{k}")
            grads[f"W{k}"] = rec["inp"].T @ g
            grads[f"b{k}"] = g.sum(axis=0)
            g = g @ W.T
        return [grads[n] for n in self.names]


class Adam:
    """Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8)."""

    def __init__(self, params: list[np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameters")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ValueError("gradient shape mismatch")
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(net: Mlp, grads, state: Adam) -> Mlp:
    state.step(grads)
    return net


def clip_by_global_norm(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        return [g * scale for g in grads]
    return grads


def _check_same(a: Mlp, b: Mlp):
    if a.sizes != b.sizes or a.names != b.names:
        raise ValueError("networks have different architectures")


def polyak_update(target: Mlp, online: Mlp, tau: float) -> Mlp:
    """``target <- (1 - tau) * target + tau * online``; tau = 1 is a hard copy."""
    _check_same(target, online)
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    if tau == 1.0:
        for t, o in zip(target.params, online.params):
            t[...] = o
        for k, (m, v) in online.running.items():
            target.running[k][0][...] = m
            target.running[k][1][...] = v
        return target
    for t, o in zip(target.params, online.params):
        t *= 1.0 - tau
        t += tau * o
    for k, (m, v) in online.running.items():
        target.running[k][0][...] = (1 - tau) * target.running[k][0] + tau * m
        target.running[k][1][...] = (1 - tau) * target.running[k][1] + tau * v
    return target


# ------------------------------------------------------------- checkpoints
def net_arrays(net: Mlp, prefix: str = "") -> dict[str, np.ndarray]:
    out = {f"{prefix}{n}": p for n, p in zip(net.names, net.params)}
    for k, (m, v) in net.running.items():
        out[f"{prefix}bn_mean{k}"] = m
        out[f"{prefix}bn_var{k}"] = v
    return out


def load_net_arrays(net: Mlp, arrays: dict[str, np.ndarray], prefix: str = "") -> Mlp:
    for n, p in zip(net.names, net.params):
        src = arrays[f"{prefix}{n}"]
        if src.shape != p.shape:
            raise ValueError(f"checkpoint array {prefix}{n} has shape {src.shape}, expected {p.shape}")
        p[...] = src
    for k, (m, v) in net.running.items():
        m[...] = arrays[f"{prefix}bn_mean{k}"]
        v[...] = arrays[f"{prefix}bn_var{k}"]
    return net


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    header = {
        "arrays": [{"name": k, "shape": list(np.shape(a))} for k, a in arrays.items()],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    try:
        with path.open("wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
            fh.write(blob)
            for a in arrays.values():
                fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc}") from exc
    if data[:5] != MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    version, n = struct.unpack_from("<II", data, 5)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 13
    header = json.loads(data[off:off + n].decode("utf-8"))
    off += n
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape)
        arrays[entry["name"]] = arr.astype(np.float64)
        off += 8 * count
    if off != len(data):
        raise ValueError(f"{path}: trailing or missing bytes")
    return arrays, header["meta"]
