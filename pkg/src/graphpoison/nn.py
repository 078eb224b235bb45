"""Dense float64 primitives with hand-written gradients, Adam, and checkpoints.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Nothing here keeps
a tape: each model composes these pieces and writes its own backward pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def check_finite(x: np.ndarray, what: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return x


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.ndim}-d and {b.ndim}-d")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {a.shape} @ {b.shape}")
    return a @ b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Gradient through ReLU evaluated at pre-activation ``x``; zero where ``x <= 0``."""
    return np.where(np.asarray(x) > 0, upstream, 0.0)


def softmax(z: np.ndarray) -> np.ndarray:
    """Softmax over the last axis, shifted by the row maximum."""
    z = np.asarray(z, dtype=DTYPE)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=DTYPE)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(probs: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood of ``labels`` and its gradient w.r.t. the logits.

    ``probs`` holds one softmax distribution per row. The returned gradient is
    ``(probs - onehot) / batch``, i.e. the derivative of the mean loss with respect
    to the pre-softmax logits.
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=DTYPE))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    batch, classes = probs.shape
    if labels.shape[0] != batch:
        raise ShapeError(f"{labels.shape[0]} labels for a batch of {batch}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"labels must lie in [0, {classes})")
    picked = probs[np.arange(batch), labels]
    with np.errstate(divide="ignore"):
        loss = float(-np.mean(np.log(picked)))
    grad = probs.copy()
    grad[np.arange(batch), labels] -= 1.0
    return loss, grad / batch


@dataclass
class ParamTensor:
    value: np.ndarray
    grad: np.ndarray = field(default=None, repr=False)
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.value = np.array(self.value, dtype=DTYPE)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.m is None:
            self.m = np.zeros_like(self.value)
        if self.v is None:
            self.v = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def reset_moments(self) -> None:
        self.m.fill(0.0)
        self.v.fill(0.0)

    def copy(self) -> "ParamTensor":
        return ParamTensor(self.value.copy(), self.grad.copy(), self.m.copy(), self.v.copy())


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # False gives the plain gradient step w <- w - lr * dJ/dw
    moments: bool = True


def adam_step(param: ParamTensor, lr: float, beta1: float, beta2: float, eps: float, t: int,
              moments: bool = True) -> ParamTensor:
    """Apply one update to ``param`` in place using ``param.grad``.

    ``t`` is the 1-based step count used for bias correction.
    """
    if t < 1:
        raise ValueError("adam step count t must be >= 1")
    g = param.grad
    if not moments:
        param.value -= lr * g
        return param
    param.m *= beta1
    param.m += (1.0 - beta1) * g
    param.v *= beta2
    param.v += (1.0 - beta2) * g * g
    m_hat = param.m / (1.0 - beta1**t)
    v_hat = param.v / (1.0 - beta2**t)
    param.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return param


def apply_adam(params: Mapping[str, ParamTensor], cfg: AdamConfig, t: int) -> None:
    for p in params.values():
        adam_step(p, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, t, moments=cfg.moments)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def finite_diff_check(
    f: Callable[[], tuple[float, Mapping[str, np.ndarray]]],
    params: Mapping[str, np.ndarray],
    h: float = 1e-5,
    floor: float = 1e-6,
) -> float:
    """Largest relative disagreement between analytic and central-difference gradients.

    ``f()`` evaluates the objective at the current contents of ``params`` and returns
    ``(value, grads)`` with ``grads[name]`` shaped like ``params[name]``. Entries of
    ``params`` are perturbed in place and restored afterwards. Per entry the error is
    ``|a - n| / max(|a|, |n|, floor)``; ``floor`` keeps exact zeros from dividing by 0.
    """
    _, analytic = f()
    analytic = {k: np.array(v, dtype=DTYPE) for k, v in analytic.items()}
    worst = 0.0
    for name, arr in params.items():
        flat = arr.reshape(-1)
        grad = analytic[name].reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up, _ = f()
            flat[idx] = orig - h
            down, _ = f()
            flat[idx] = orig
            numeric = (up - down) / (2.0 * h)
            denom = max(abs(grad[idx]), abs(numeric), floor)
            worst = max(worst, abs(grad[idx] - numeric) / denom)
    return worst


# -- checkpoints ----------------------------------------------------------------

def save_checkpoint(path: str | Path, tensors: Mapping[str, ParamTensor], meta: dict) -> Path:
    """Write ``manifest.json`` plus raw little-endian float64 files, one per array.

    Each tensor contributes ``<name>.value.f64``, ``<name>.m.f64`` and ``<name>.v.f64``
    so a warm start can resume the optimiser state.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    shapes = {}
    for name, p in tensors.items():
        shapes[name] = list(p.shape)
        for part in ("value", "m", "v"):
            getattr(p, part).astype("<f8").tofile(path / f"{name}.{part}.f64")
    manifest = dict(meta)
    manifest["tensors"] = shapes
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_checkpoint(path: str | Path) -> tuple[dict[str, ParamTensor], dict]:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    tensors = {}
    for name, shape in manifest["tensors"].items():
        parts = {}
        for part in ("value", "m", "v"):
            raw = np.fromfile(path / f"{name}.{part}.f64", dtype="<f8")
            if raw.size != int(np.prod(shape)):
                raise ValueError(f"{name}.{part}: expected {int(np.prod(shape))} values, found {raw.size}")
            parts[part] = raw.reshape(shape).astype(DTYPE)
        tensors[name] = ParamTensor(parts["value"], m=parts["m"], v=parts["v"])
    return tensors, manifest
