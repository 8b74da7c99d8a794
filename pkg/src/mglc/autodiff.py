"""Tape-based reverse-mode differentiation over dense float64 arrays, plus Adam."""

from __future__ import annotations

import copy
import json
import threading
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

CHECKPOINT_VERSION = 1

_local = threading.local()


class Tensor:
    __slots__ = ("value", "requires_grad", "grad")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else float("nan")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), -1.0))


class Tape:
    """Records operations in execution order; ``backward`` replays them in reverse."""

    def __init__(self) -> None:
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._outer: Tape | None = None

    def __enter__(self) -> "Tape":
        self._outer = getattr(_local, "tape", None)
        _local.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _local.tape = self._outer

    def backward(self, loss: Tensor) -> None:
        if loss.value.size != 1:
            raise ValueError("backward needs a scalar loss")
        loss.grad = np.ones_like(loss.value)
        for out, inputs, rule in reversed(self.records):
            if out.grad is None:
                continue
            for inp, g in zip(inputs, rule(out.grad)):
                if g is None or not inp.requires_grad:
                    continue
                # accumulate: shared subexpressions receive several contributions
                inp.grad = g.copy() if inp.grad is None else inp.grad + g
        self.clear()

    def clear(self) -> None:
        self.records.clear()


def active_tape() -> Tape | None:
    return getattr(_local, "tape", None)


def no_grad() -> "_NoGrad":
    return _NoGrad()


class _NoGrad:
    def __enter__(self):
        self._outer = getattr(_local, "tape", None)
        _local.tape = None

    def __exit__(self, *exc):
        _local.tape = self._outer


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(value: np.ndarray, inputs: Sequence[Tensor], rule: Callable) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise FloatingPointError("non-finite value produced in forward pass")
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs)
    tape = active_tape()
    if needs and tape is not None:
        tape.records.append((out, tuple(inputs), rule))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}") from None


# -- primitives --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    return _result(a.value + b.value, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _result(a.value * b.value, (a, b),
                   lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    return _result(a.value @ b.value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0  # subgradient at 0 is 0
    return _result(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    s = _stable_sigmoid(x.value)
    return _result(s, (x,), lambda g: (g * s * (1.0 - s),))


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sum_pool(x: Tensor, segments: np.ndarray | None = None, n_segments: int | None = None) -> Tensor:
    """Sum rows, either all of them (shape (1, d)) or per segment id (shape (n_segments, d))."""
    if segments is None:
        return _result(x.value.sum(axis=0, keepdims=True), (x,),
                       lambda g: (np.broadcast_to(g, x.shape).copy(),))
    return scatter_add(x, segments, n_segments)


def mean_pool(x: Tensor, segments: np.ndarray | None = None, n_segments: int | None = None) -> Tensor:
    if segments is None:
        n = x.shape[0]
        if n == 0:
            raise ValueError("mean_pool over zero rows")
        return _result(x.value.mean(axis=0, keepdims=True), (x,),
                       lambda g: (np.broadcast_to(g / n, x.shape).copy(),))
    segments = np.asarray(segments, dtype=np.int64)
    counts = np.bincount(segments, minlength=n_segments).astype(np.float64)
    if np.any(counts == 0):
        raise ValueError("mean_pool: empty segment")
    return mul(scatter_add(x, segments, n_segments), (1.0 / counts)[:, None])


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    try:
        value = np.concatenate([p.value for p in parts], axis=axis)
    except ValueError as err:
        raise ValueError(f"concat: {err}") from None
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def rule(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(parts)))

    return _result(value, parts, rule)


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise ValueError("gather_rows: index out of range")
    n = x.shape[0]

    def rule(g):
        out = np.zeros((n,) + g.shape[1:])
        np.add.at(out, index, g)
        return (out,)

    return _result(x.value[index], (x,), rule)


def scatter_add(x: Tensor, index: np.ndarray, n_rows: int) -> Tensor:
    """Row i of ``x`` is added into output row ``index[i]``; adjoint of gather_rows."""
    index = np.asarray(index, dtype=np.int64)
    if index.shape[0] != x.shape[0]:
        raise ValueError("scatter_add: one target row per input row required")
    if index.size and (index.min() < 0 or index.max() >= n_rows):
        raise ValueError("scatter_add: index out of range")
    out = np.zeros((n_rows,) + x.shape[1:])
    np.add.at(out, index, x.value)
    return _result(out, (x,), lambda g: (g[index],))


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy; targets in {0, 1}, same shape as logits."""
    z = logits.value
    y = np.asarray(targets, dtype=np.float64).reshape(z.shape)
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = z.size
    return _result(np.array(loss.mean()), (logits,),
                   lambda g: (g * (_stable_sigmoid(z) - y) / n,))


# -- parameters --------------------------------------------------------------

def xavier_init(fan_in: int, fan_out: int, rng_seed: int | np.random.Generator) -> Tensor:
    """Glorot-uniform matrix of shape (fan_in, fan_out)."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fans must be >= 1")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)


class ParameterStore:
    """Named learnable tensors with gradient slots and Adam moments."""

    def __init__(self) -> None:
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        self.params[name] = t
        self.m[name] = np.zeros_like(t.value)
        self.v[name] = np.zeros_like(t.value)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def grad(self, name: str) -> np.ndarray:
        t = self.params[name]
        return np.zeros_like(t.value) if t.grad is None else t.grad

    def clone(self) -> "ParameterStore":
        return copy.deepcopy(self)

    def n_values(self) -> int:
        return sum(t.value.size for t in self.params.values())

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "step": self.step,
            "params": [
                {
                    "name": name,
                    "shape": list(t.shape),
                    "values": t.value.ravel().tolist(),
                    "m": self.m[name].ravel().tolist(),
                    "v": self.v[name].ravel().tolist(),
                }
                for name, t in self.params.items()
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ParameterStore":
        if data.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {data.get('version')!r}")
        store = cls()
        store.step = int(data["step"])
        for rec in data["params"]:
            shape = tuple(rec["shape"])
            store.add(rec["name"], np.array(rec["values"], dtype=np.float64).reshape(shape))
            store.m[rec["name"]] = np.array(rec["m"], dtype=np.float64).reshape(shape)
            store.v[rec["name"]] = np.array(rec["v"], dtype=np.float64).reshape(shape)
        return store

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        data = self.to_dict()
        if extra:
            data["extra"] = extra
        Path(path).write_text(json.dumps(data), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ParameterStore":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def adam_step(store: ParameterStore, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> ParameterStore:
    grads = {name: store.grad(name) for name in store}
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name!r}")
    store.step += 1
    t = store.step
    for name, g in grads.items():
        store.m[name] = beta1 * store.m[name] + (1 - beta1) * g
        store.v[name] = beta2 * store.v[name] + (1 - beta2) * g * g
        m_hat = store.m[name] / (1 - beta1 ** t)
        v_hat = store.v[name] / (1 - beta2 ** t)
        store.params[name].value = store.params[name].value - lr * m_hat / (np.sqrt(v_hat) + eps)
    return store


def backward(f: Callable[[], Tensor], store: ParameterStore) -> float:
    """Zero gradients, evaluate ``f`` on a fresh tape and backpropagate; returns the loss."""
    store.zero_grad()
    with Tape() as tape:
        loss = f()
        tape.backward(loss)
    return loss.item()


def grad_check(f: Callable[[], Tensor], store: ParameterStore, eps: float = 1e-5,
               names: Iterable[str] | None = None, floor: float = 1e-6) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    """
    backward(f, store)
    analytic = {name: store.grad(name).copy() for name in store}
    worst = 0.0
    with no_grad():
        for name in (names if names is not None else list(store)):
            p = store[name].value
            flat = p.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = f().item()
                flat[i] = orig - eps
                down = f().item()
                flat[i] = orig
                num = (up - down) / (2 * eps)
                a = analytic[name].reshape(-1)[i]
                err = abs(a - num) / max(abs(a), abs(num), floor)
                worst = max(worst, err)
    store.zero_grad()
    return worst
