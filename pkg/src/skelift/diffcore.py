"""Small reverse-mode differentiation engine over float64 numpy arrays.

Only the primitives the lifting networks need are provided. Every op accepts
optional leading batch dimensions; nothing else is broadcast except bias rows.
Backward passes visit nodes in reverse creation order, so gradient
accumulation order (and hence every bit of the result) is fixed.
"""
from __future__ import annotations

import itertools
import json
import os
import tempfile
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

import numpy as np

from .errors import EvaluationError, ShapeError, ValidationError

CHECKPOINT_VERSION = 1

_ids = itertools.count()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id")

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        _parents: tuple[Tensor, ...] = (),
        _backward: Callable[[np.ndarray], None] | None = None,
    ):
        self.data = np.asarray(data, dtype=_dtype_of(data))
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None
        self._id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order: dict[int, Tensor] = {}
        stack = [self]
        while stack:
            node = stack.pop()
            if node._id in order or not node.requires_grad:
                continue
            order[node._id] = node
            stack.extend(node._parents)
        self._accumulate(grad)
        for nid in sorted(order, reverse=True):
            node = order[nid]
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # arithmetic sugar
    def __add__(self, other: Tensor | float) -> Tensor:
        return add(self, as_tensor(other))

    def __sub__(self, other: Tensor | float) -> Tensor:
        return add(self, scale(as_tensor(other), -1.0))

    def __mul__(self, k: float) -> Tensor:
        return scale(self, k)

    __rmul__ = __mul__

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)


def _dtype_of(data: Any) -> type:
    # extended precision passes through so the finite-difference oracle can use it
    return np.longdouble if getattr(data, "dtype", None) == np.longdouble else np.float64


def as_tensor(x: Tensor | Any) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading batch axes may appear on either side."""
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return Tensor(out_data, _parents=(a, b), _backward=backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a bias broadcast over ``a``'s leading axes."""
    try:
        out_data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add shape mismatch: {a.shape} + {b.shape}") from None
    if out_data.shape != a.shape and out_data.shape != b.shape:
        raise ShapeError(f"add would broadcast both operands: {a.shape} + {b.shape}")

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return Tensor(out_data, _parents=(a, b), _backward=backward)


def scale(a: Tensor, k: float) -> Tensor:
    k = float(k)

    def backward(g: np.ndarray) -> None:
        a._accumulate(g * k)

    return Tensor(a.data * k, _parents=(a,), _backward=backward)


def concat_features(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the last (feature) axis."""
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat row mismatch: {a.shape} vs {b.shape}")
    p = a.shape[-1]

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g[..., :p])
        if b.requires_grad:
            b._accumulate(g[..., p:])

    return Tensor(np.concatenate([a.data, b.data], axis=-1), _parents=(a, b), _backward=backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from None

    def backward(g: np.ndarray) -> None:
        a._accumulate(g.reshape(a.shape))

    return Tensor(out, _parents=(a,), _backward=backward)


def take_time(a: Tensor, index: int) -> Tensor:
    """Select one step along the time axis (second to last) of a (..., T, C) tensor."""
    out = a.data[..., index, :]

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(a.data)
        full[..., index, :] = g
        a._accumulate(full)

    return Tensor(out, _parents=(a,), _backward=backward)


def activation(x: Tensor, kind: str = "leaky_relu", slope: float = 0.1) -> Tensor:
    """Elementwise relu, leaky_relu or sigmoid.

    At zero, relu's gradient is 0 and leaky_relu's is ``slope``.
    """
    d = x.data
    if kind == "relu":
        out = np.where(d > 0, d, 0.0)
        deriv = (d > 0).astype(np.float64)
    elif kind == "leaky_relu":
        out = np.where(d > 0, d, slope * d)
        deriv = np.where(d > 0, 1.0, slope)
    elif kind == "sigmoid":
        out = np.empty_like(d)
        pos = d >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
        ez = np.exp(d[~pos])
        out[~pos] = ez / (1.0 + ez)
        deriv = out * (1.0 - out)
    elif kind == "identity":
        out = d.copy()
        deriv = np.ones_like(d)
    else:
        raise ValidationError(f"unknown activation {kind!r}")

    def backward(g: np.ndarray) -> None:
        x._accumulate(g * deriv)

    return Tensor(out, _parents=(x,), _backward=backward)


def temporal_conv(x: Tensor, kernel: Tensor, dilation: int = 1) -> Tensor:
    """Valid dilated 1-D convolution along time.

    x: (..., T, C_in); kernel: (k, C_in, C_out). Output (..., T - (k-1)*dilation, C_out).
    """
    if dilation < 1:
        raise ShapeError(f"dilation must be positive, got {dilation}")
    if kernel.data.ndim != 3 or x.shape[-1] != kernel.shape[1]:
        raise ShapeError(f"temporal_conv channel mismatch: x {x.shape}, kernel {kernel.shape}")
    k = kernel.shape[0]
    T = x.shape[-2]
    need = (k - 1) * dilation + 1
    if T < need:
        raise ShapeError(f"temporal_conv needs at least {need} frames, got {T}")
    t_out = T - (k - 1) * dilation
    xd, kd = x.data, kernel.data
    out = np.matmul(xd[..., 0:t_out, :], kd[0])
    for i in range(1, k):
        s = i * dilation
        out = out + np.matmul(xd[..., s : s + t_out, :], kd[i])

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            gx = np.zeros_like(xd)
            for i in range(k):
                s = i * dilation
                gx[..., s : s + t_out, :] += np.matmul(g, kd[i].T)
            x._accumulate(gx)
        if kernel.requires_grad:
            gk = np.empty_like(kd)
            c_in, c_out = kd.shape[1], kd.shape[2]
            g2 = g.reshape(-1, c_out)
            for i in range(k):
                s = i * dilation
                gk[i] = xd[..., s : s + t_out, :].reshape(-1, c_in).T @ g2
            kernel._accumulate(gk)

    return Tensor(out, _parents=(x, kernel), _backward=backward)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, computed after subtracting the row maximum."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray) -> None:
        x._accumulate(out * (g - (g * out).sum(axis=-1, keepdims=True)))

    return Tensor(out, _parents=(x,), _backward=backward)


def sum_squares(x: Tensor) -> Tensor:
    """Scalar sum of squared entries."""

    def backward(g: np.ndarray) -> None:
        x._accumulate(2.0 * x.data * g)

    return Tensor(np.sum(x.data * x.data), _parents=(x,), _backward=backward)


def squared_error(pred: Tensor, target: Tensor | np.ndarray) -> Tensor:
    return sum_squares(pred - as_tensor(target))


class ParamStore(OrderedDict):
    """Ordered name -> float64 array mapping of learnable parameters."""

    def __setitem__(self, key: str, value: Any) -> None:
        super().__setitem__(key, np.asarray(value, dtype=np.float64))

    def copy(self) -> ParamStore:
        return ParamStore((k, v.copy()) for k, v in self.items())

    def leaves(self) -> OrderedDict[str, Tensor]:
        """Fresh gradient-tracking tensors for one forward/backward evaluation."""
        return OrderedDict((k, Tensor(v, requires_grad=True)) for k, v in self.items())

    def constants(self) -> OrderedDict[str, Tensor]:
        return OrderedDict((k, Tensor(v)) for k, v in self.items())

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.values()))


def value_and_grad(
    function: Callable[[Mapping[str, Tensor]], Tensor], params: ParamStore
) -> tuple[float, ParamStore]:
    leaves = params.leaves()
    loss = function(leaves)
    if loss.data.size != 1:
        raise ShapeError(f"objective must be scalar, got shape {loss.shape}")
    loss.backward()
    grads = ParamStore()
    for k, leaf in leaves.items():
        grads[k] = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
    return float(loss.data), grads


@dataclass
class GradReport:
    max_rel_error: float
    worst_param: str
    worst_index: tuple[int, ...]
    per_param: dict[str, float] = field(default_factory=dict)
    loss: float = 0.0

    def passed(self, threshold: float) -> bool:
        return self.max_rel_error < threshold


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


def grad_check(
    function: Callable[[Mapping[str, Tensor]], Tensor],
    params: ParamStore,
    epsilon: float = 1e-5,
    analytic: ParamStore | None = None,
    extended: bool = True,
) -> GradReport:
    """Compare analytic gradients with central finite differences, entry by entry.

    The finite differences are evaluated in extended precision when
    ``extended`` is set, which keeps their roundoff (about ulp(loss) / epsilon)
    far below the gradients of weakly coupled parameters. ``analytic``
    overrides the backward-pass gradients (used to inject faults).
    """
    if not 0 < epsilon <= 1e-2:
        raise ValidationError(f"epsilon must lie in (0, 1e-2], got {epsilon}")
    loss, grads = value_and_grad(function, params)
    if not np.isfinite(loss):
        raise EvaluationError(f"objective is not finite: {loss}")
    if analytic is not None:
        grads = analytic

    wide = np.longdouble if extended else np.float64
    eps = wide(epsilon)

    def evaluate(store: Mapping[str, np.ndarray]):
        val = function(OrderedDict((k, Tensor(v)) for k, v in store.items())).data.reshape(())
        if not np.isfinite(val):
            raise EvaluationError("objective became non-finite during finite differencing")
        return val

    probe = OrderedDict((k, v.astype(wide)) for k, v in params.items())
    per_param: dict[str, float] = {}
    worst = (-1.0, "", ())
    for name, value in params.items():
        numeric = np.empty_like(value)
        flat = probe[name].reshape(-1)
        for idx in range(value.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            hi = evaluate(probe)
            flat[idx] = orig - eps
            lo = evaluate(probe)
            flat[idx] = orig
            numeric.reshape(-1)[idx] = (hi - lo) / (2 * eps)
        err = relative_error(grads[name], numeric)
        if err.size:
            at = int(np.argmax(err))
            per_param[name] = float(err.reshape(-1)[at])
            if per_param[name] > worst[0]:
                worst = (per_param[name], name, np.unravel_index(at, value.shape))
        else:
            per_param[name] = 0.0
    return GradReport(
        max_rel_error=max(worst[0], 0.0),
        worst_param=worst[1],
        worst_index=tuple(int(i) for i in worst[2]),
        per_param=per_param,
        loss=loss,
    )


# checkpoints


def _encode(arr: np.ndarray) -> dict[str, Any]:
    return {"shape": list(arr.shape), "data": [float(x) for x in arr.reshape(-1)]}


def _decode(doc: Mapping[str, Any]) -> np.ndarray:
    shape = tuple(int(s) for s in doc["shape"])
    data = np.asarray(doc["data"], dtype=np.float64)
    if data.size != int(np.prod(shape)):
        raise ValidationError(f"checkpoint tensor has {data.size} values for shape {shape}")
    return data.reshape(shape)


def encode_store(store: Mapping[str, np.ndarray]) -> dict[str, Any]:
    return {k: _encode(np.asarray(v)) for k, v in store.items()}


def decode_store(doc: Mapping[str, Any]) -> ParamStore:
    store = ParamStore()
    for k, v in doc.items():
        store[k] = _decode(v)
    return store


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(
    path: str | Path,
    model: str,
    params: ParamStore,
    hyper: Mapping[str, Any] | None = None,
    optimizer: Mapping[str, Any] | None = None,
) -> None:
    doc: dict[str, Any] = {
        "format_version": CHECKPOINT_VERSION,
        "model": model,
        "hyper": dict(hyper or {}),
        "params": encode_store(params),
    }
    if optimizer is not None:
        doc["optimizer"] = optimizer
    atomic_write_text(path, json.dumps(doc, separators=(",", ":")) + "\n")


@dataclass
class Checkpoint:
    model: str
    params: ParamStore
    hyper: dict[str, Any]
    optimizer: dict[str, Any] | None = None


def load_checkpoint(path: str | Path, expect_model: str | Iterable[str] | None = None) -> Checkpoint:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint format_version {doc.get('format_version')!r}")
    model = doc["model"]
    if expect_model is not None:
        allowed = {expect_model} if isinstance(expect_model, str) else set(expect_model)
        if model not in allowed:
            raise ValidationError(f"{path}: expected a {sorted(allowed)} checkpoint, found {model!r}")
    return Checkpoint(model, decode_store(doc["params"]), dict(doc.get("hyper", {})), doc.get("optimizer"))
