"""Small fixed-shape reverse-mode toolkit: parameter store, MLPs, SGD, gradient checks.

There is no general tape. Each MLP forward call returns a cache, and the
matching backward call pushes an upstream gradient through it and
accumulates (``+=``) parameter gradients into the owning :class:`ParamStore`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT = "objvlp-checkpoint/1"


class StaleCacheError(RuntimeError):
    pass


class NondeterministicClosureError(RuntimeError):
    pass


class ParamStore:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.velocity: dict[str, np.ndarray] = {}
        self.version = 0

    def add(self, name: str, value) -> np.ndarray:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        arr = np.array(value, dtype=np.float64)
        self.params[name] = arr
        self.grads[name] = np.zeros_like(arr)
        self.velocity[name] = np.zeros_like(arr)
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self):
        return list(self.params)

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def size(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> ParamStore:
        out = ParamStore()
        for name, value in self.params.items():
            out.add(name, value)
            out.velocity[name][...] = self.velocity[name]
        return out

    def to_dict(self) -> dict:
        return {
            name: {"shape": list(p.shape), "data": p.reshape(-1).tolist()}
            for name, p in self.params.items()
        }

    @classmethod
    def from_dict(cls, d: dict) -> ParamStore:
        store = cls()
        for name, entry in d.items():
            data = np.array(entry["data"], dtype=np.float64)
            store.add(name, data.reshape(entry["shape"]))
        return store

    def equals(self, other: ParamStore) -> bool:
        """Bitwise equality of names, shapes and values."""
        if self.names() != other.names():
            return False
        return all(
            self.params[n].shape == other.params[n].shape
            and self.params[n].tobytes() == other.params[n].tobytes()
            for n in self.names()
        )


def save_checkpoint(path, store: ParamStore, meta: dict | None = None):
    doc = {"format": CHECKPOINT_FORMAT, "meta": meta or {}, "params": store.to_dict()}
    Path(path).write_text(json.dumps(doc, indent=None, sort_keys=False) + "\n")


def load_checkpoint(path):
    """Returns ``(store, meta)``."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not an {CHECKPOINT_FORMAT} file")
    return ParamStore.from_dict(doc["params"]), doc.get("meta", {})


@dataclass(frozen=True)
class MlpSpec:
    layer_dims: tuple
    nonlinearity: str = "tanh"
    output_normalize: bool = False

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ValueError("an MLP needs at least input and output dims, all positive")
        if self.nonlinearity not in ("tanh", "relu"):
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")
        object.__setattr__(self, "layer_dims", dims)

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1


def init_mlp(store: ParamStore, prefix: str, spec: MlpSpec, rng: np.random.Generator, zero_last=False):
    """Glorot-uniform weights, zero biases. ``zero_last`` zeroes the output layer weights."""
    for i in range(spec.n_layers):
        fan_in, fan_out = spec.layer_dims[i], spec.layer_dims[i + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        if zero_last and i == spec.n_layers - 1:
            w[...] = 0.0
        store.add(f"{prefix}.W{i}", w)
        store.add(f"{prefix}.b{i}", np.zeros(fan_out))


def _act(kind, z):
    if kind == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _act_grad(kind, z, a):
    if kind == "tanh":
        return 1.0 - a * a
    return (z > 0.0).astype(np.float64)


@dataclass
class MlpCache:
    spec: MlpSpec
    store: ParamStore
    prefix: str
    version: int
    squeeze: bool
    inputs: list = field(default_factory=list)
    preacts: list = field(default_factory=list)
    acts: list = field(default_factory=list)
    raw_out: np.ndarray | None = None
    norms: np.ndarray | None = None
    out: np.ndarray | None = None


def mlp_forward(spec: MlpSpec, store: ParamStore, x, prefix: str):
    """Forward pass over a vector or a row-batch; returns ``(output, cache)``."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = np.atleast_2d(x)
    if h.shape[1] != spec.layer_dims[0]:
        raise ValueError(f"{prefix}: input dim {h.shape[1]} != {spec.layer_dims[0]}")
    cache = MlpCache(spec, store, prefix, store.version, squeeze)
    for i in range(spec.n_layers):
        w, b = store[f"{prefix}.W{i}"], store[f"{prefix}.b{i}"]
        cache.inputs.append(h)
        z = h @ w.T + b
        cache.preacts.append(z)
        if i < spec.n_layers - 1:
            h = _act(spec.nonlinearity, z)
        else:
            h = z
        cache.acts.append(h)
    cache.raw_out = h
    if spec.output_normalize:
        norms = np.linalg.norm(h, axis=1, keepdims=True)
        cache.norms = norms
        h = h / norms
    cache.out = h
    return (h[0] if squeeze else h), cache


def mlp_backward(cache: MlpCache, upstream):
    """Accumulate parameter gradients for ``upstream = dL/d(output)``; returns ``dL/d(input)``."""
    store, spec, prefix = cache.store, cache.spec, cache.prefix
    if cache.version != store.version:
        raise StaleCacheError(f"{prefix}: parameters changed since the forward pass")
    g = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    if spec.output_normalize:
        y = cache.out
        g = (g - y * np.sum(y * g, axis=1, keepdims=True)) / cache.norms
    for i in reversed(range(spec.n_layers)):
        if i < spec.n_layers - 1:
            g = g * _act_grad(spec.nonlinearity, cache.preacts[i], cache.acts[i])
        w = store[f"{prefix}.W{i}"]
        store.grads[f"{prefix}.W{i}"] += g.T @ cache.inputs[i]
        store.grads[f"{prefix}.b{i}"] += g.sum(axis=0)
        g = g @ w
    return g[0] if cache.squeeze else g


def relu_margin(spec: MlpSpec, store: ParamStore, x, prefix: str) -> float:
    """Smallest ``|pre-activation|`` over hidden units; ``inf`` for tanh nets."""
    if spec.nonlinearity != "relu" or spec.n_layers < 2:
        return float("inf")
    _, cache = mlp_forward(spec, store, x, prefix)
    return float(min(np.abs(z).min() for z in cache.preacts[:-1]))


def sgd_step(store: ParamStore, lr: float, momentum: float = 0.0):
    """Momentum SGD: ``v <- momentum*v + g``, ``p <- p - lr*v``; then zero gradients."""
    if not lr > 0:
        raise ValueError("lr must be > 0")
    if not 0.0 <= momentum < 1.0:
        raise ValueError("momentum must lie in [0, 1)")
    for name, p in store.params.items():
        v = store.velocity[name]
        v *= momentum
        v += store.grads[name]
        p -= lr * v
    store.zero_grad()
    store.version += 1
    return store


@dataclass
class GradcheckReport:
    max_rel_err: dict
    tol: float
    checked: int
    excluded: int = 0

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"gradcheck {status}: worst rel err {self.worst:.3e} over {self.checked} coords (tol {self.tol:g})"


def rel_err(a, n):
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def gradcheck(closure, params: ParamStore, h: float = 1e-5, tol: float = 1e-4,
              names=None, max_coords: int | None = None, exclude=None, seed: int = 0) -> GradcheckReport:
    """Compare analytic gradients with central differences.

    ``closure(params)`` must return the scalar loss and accumulate its
    gradient into ``params.grads`` (the checker zeroes them before each
    call). ``max_coords`` subsamples coordinates per parameter;
    ``exclude(name, index)`` can veto individual coordinates.
    """
    params.zero_grad()
    base = closure(params)
    analytic = {k: g.copy() for k, g in params.grads.items()}
    params.zero_grad()
    again = closure(params)
    if base != again or any(not np.array_equal(analytic[k], params.grads[k]) for k in analytic):
        raise NondeterministicClosureError("closure returned different results on repeated evaluation")

    rng = np.random.default_rng(seed)
    report = {}
    checked = excluded = 0
    for name in names if names is not None else params.names():
        p = params[name]
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst = 0.0
        for j in idx:
            if exclude is not None and exclude(name, int(j)):
                excluded += 1
                continue
            orig = flat[j]
            flat[j] = orig + h
            params.zero_grad()
            fp = closure(params)
            flat[j] = orig - h
            params.zero_grad()
            fm = closure(params)
            flat[j] = orig
            num = (fp - fm) / (2.0 * h)
            worst = max(worst, float(rel_err(analytic[name].reshape(-1)[j], num)))
            checked += 1
        report[name] = worst
    params.zero_grad()
    return GradcheckReport(report, tol, checked, excluded)
