#!/usr/bin/env python3
"""
Numerics - dense linear algebra, layer tape and Adam
Small, float64-only building blocks for the fixed feedforward quantile network.

A forward pass through a `Sequential` chain records every layer together with
the inputs it saw on a `Tape`; `backward` replays the tape in reverse and
accumulates gradients into each layer's `Parameter`s.
"""

import struct
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import CheckpointError, DimensionError, TrainingError

# Row-major float64 matrix; every public operation returns one of these
Tensor2 = np.ndarray

TRAIN = "train"
EVAL = "eval"

CHECKPOINT_FORMAT_VERSION = 1


def as_tensor2(x: Any, name: str = "tensor") -> Tensor2:
    """Coerce input into a 2-D float64 array"""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def check_finite(x: Tensor2, name: str = "tensor") -> Tensor2:
    """Raise TrainingError when any entry is NaN or infinite"""
    if not np.isfinite(x).all():
        raise TrainingError(f"non-finite values in {name}")
    return x


@dataclass
class Parameter:
    """Trainable tensor with its gradient and Adam moments"""
    name: str
    value: Tensor2
    grad: Tensor2 = field(init=False)
    adam_m: Tensor2 = field(init=False)
    adam_v: Tensor2 = field(init=False)

    def __post_init__(self):
        self.value = as_tensor2(self.value, self.name).copy()
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0.0)


def matmul(a: Tensor2, b: Tensor2) -> Tensor2:
    """Standard matrix product"""
    a = as_tensor2(a, "a")
    b = as_tensor2(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return check_finite(a @ b, "matmul output")


def affine_forward(x: Tensor2, w: Parameter, b: Parameter) -> Tensor2:
    """x·W + b with the bias row broadcast over the batch"""
    x = as_tensor2(x, "x")
    if x.shape[1] != w.value.shape[0]:
        raise DimensionError(f"input width {x.shape[1]} does not match weight rows {w.value.shape[0]}")
    if b.value.shape != (1, w.value.shape[1]):
        raise DimensionError(f"bias shape {b.value.shape} does not match weight columns {w.value.shape[1]}")
    return check_finite(x @ w.value + b.value, "affine output")


def relu(x: Tensor2) -> Tensor2:
    """Elementwise max(0, x)"""
    return np.maximum(as_tensor2(x, "x"), 0.0)


# ----- Layers -----

class Layer:
    """Base class for tape-recorded layers"""

    def parameters(self) -> List[Parameter]:
        return []

    def forward(self, x: Tensor2, mode: str = EVAL) -> Tuple[Tensor2, Any]:
        """Return the output and the cache needed by backward"""
        raise NotImplementedError

    def backward(self, grad_out: Tensor2, cache: Any) -> Tensor2:
        """Accumulate parameter grads and return the gradient w.r.t. the input"""
        raise NotImplementedError


class Affine(Layer):
    """Plain dense layer, weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero bias"""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, name: str = "affine"):
        bound = 1.0 / np.sqrt(fan_in)
        self.w = Parameter(f"{name}.w", rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        self.b = Parameter(f"{name}.b", np.zeros((1, fan_out)))

    def parameters(self) -> List[Parameter]:
        return [self.w, self.b]

    def forward(self, x, mode=EVAL):
        return affine_forward(x, self.w, self.b), x

    def backward(self, grad_out, cache):
        x = cache
        self.w.grad += x.T @ grad_out
        self.b.grad += grad_out.sum(axis=0, keepdims=True)
        return grad_out @ self.w.value.T


class NoisyAffine(Layer):
    """
    Dense layer with factorised Gaussian parameter noise:
    W = W_mu + W_sigma * eps_w, b = b_mu + b_sigma * eps_b.
    Train mode draws fresh noise per forward pass, eval mode uses zero noise.
    """

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator,
                 sigma_init: float = 0.5, name: str = "noisy"):
        self.fan_in = fan_in
        self.fan_out = fan_out
        self.rng = rng
        bound = 1.0 / np.sqrt(fan_in)
        self.w_mu = Parameter(f"{name}.w_mu", rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        self.w_sigma = Parameter(f"{name}.w_sigma", np.full((fan_in, fan_out), sigma_init / np.sqrt(fan_in)))
        self.b_mu = Parameter(f"{name}.b_mu", np.zeros((1, fan_out)))
        self.b_sigma = Parameter(f"{name}.b_sigma", np.full((1, fan_out), sigma_init / np.sqrt(fan_in)))

    def parameters(self) -> List[Parameter]:
        return [self.w_mu, self.w_sigma, self.b_mu, self.b_sigma]

    @staticmethod
    def _scale_noise(x: np.ndarray) -> np.ndarray:
        return np.sign(x) * np.sqrt(np.abs(x))

    def sample_noise(self) -> Tuple[np.ndarray, np.ndarray]:
        """Draw a factorised noise sample (eps_w, eps_b)"""
        eps_in = self._scale_noise(self.rng.standard_normal(self.fan_in))
        eps_out = self._scale_noise(self.rng.standard_normal(self.fan_out))
        return np.outer(eps_in, eps_out), eps_out.reshape(1, -1)

    def forward(self, x, mode=EVAL, noise: Optional[Tuple[np.ndarray, np.ndarray]] = None):
        x = as_tensor2(x, "x")
        if x.shape[1] != self.fan_in:
            raise DimensionError(f"input width {x.shape[1]} does not match layer fan-in {self.fan_in}")
        if noise is None:
            if mode == TRAIN:
                noise = self.sample_noise()
            else:
                noise = (np.zeros((self.fan_in, self.fan_out)), np.zeros((1, self.fan_out)))
        eps_w, eps_b = noise
        w = self.w_mu.value + self.w_sigma.value * eps_w
        b = self.b_mu.value + self.b_sigma.value * eps_b
        out = check_finite(x @ w + b, "noisy affine output")
        return out, (x, w, eps_w, eps_b)

    def backward(self, grad_out, cache):
        x, w, eps_w, eps_b = cache
        grad_w = x.T @ grad_out
        grad_b = grad_out.sum(axis=0, keepdims=True)
        self.w_mu.grad += grad_w
        self.w_sigma.grad += grad_w * eps_w
        self.b_mu.grad += grad_b
        self.b_sigma.grad += grad_b * eps_b
        return grad_out @ w.T


class ReLU(Layer):
    def forward(self, x, mode=EVAL):
        return relu(x), x

    def backward(self, grad_out, cache):
        return grad_out * (cache > 0)


class Dropout(Layer):
    """Inverted dropout, active in train mode only"""

    def __init__(self, rate: float, rng: np.random.Generator):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng

    def forward(self, x, mode=EVAL):
        if mode != TRAIN or self.rate == 0.0:
            return x, None
        mask = (self.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * mask, mask

    def backward(self, grad_out, cache):
        return grad_out if cache is None else grad_out * cache


# ----- Tape and chains -----

class Tape:
    """Per-forward-pass record of (layer, cache) pairs"""

    def __init__(self):
        self.entries: List[Tuple[Layer, Any]] = []
        self.output_shape: Optional[Tuple[int, int]] = None

    def record(self, layer: Layer, cache: Any):
        self.entries.append((layer, cache))

    def __len__(self):
        return len(self.entries)


def backward(loss_grad: Tensor2, tape: Tape) -> Tensor2:
    """Back-propagate loss_grad through a recorded chain; returns grad w.r.t. its input"""
    grad = as_tensor2(loss_grad, "loss_grad")
    if tape.output_shape is None:
        raise DimensionError("tape holds no forward pass")
    if grad.shape != tape.output_shape:
        raise DimensionError(f"loss gradient shape {grad.shape} does not match output shape {tape.output_shape}")
    for layer, cache in reversed(tape.entries):
        grad = layer.backward(grad, cache)
    return grad


class Sequential:
    """Feedforward chain of layers"""

    def __init__(self, layers: Sequence[Layer]):
        self.layers = list(layers)

    def parameters(self) -> List[Parameter]:
        params = []
        for layer in self.layers:
            params.extend(layer.parameters())
        return params

    def noisy_layers(self) -> List[NoisyAffine]:
        return [layer for layer in self.layers if isinstance(layer, NoisyAffine)]

    def forward(self, x: Tensor2, mode: str = EVAL, tape: Optional[Tape] = None) -> Tensor2:
        x = as_tensor2(x, "x")
        for layer in self.layers:
            x, cache = layer.forward(x, mode)
            if tape is not None:
                tape.record(layer, cache)
        if tape is not None:
            tape.output_shape = x.shape
        return x


# ----- Optimizer -----

def adam_step(params: Iterable[Parameter], lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, t: int = 1):
    """Bias-corrected Adam update in place; gradients are zeroed afterwards"""
    if t < 1:
        raise ValueError(f"Adam step count must be >= 1, got {t}")
    params = list(params)
    for p in params:
        if not np.isfinite(p.grad).all():
            raise TrainingError(f"non-finite gradient in parameter {p.name}")

    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    for p in params:
        p.adam_m *= beta1
        p.adam_m += (1.0 - beta1) * p.grad
        p.adam_v *= beta2
        p.adam_v += (1.0 - beta2) * p.grad * p.grad
        m_hat = p.adam_m / correction1
        v_hat = p.adam_v / correction2
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.zero_grad()


class Adam:
    """Keeps the step counter for adam_step"""

    def __init__(self, params: Iterable[Parameter], lr: float = 5e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps, self.t)


# ----- Gradient checking -----

def finite_difference_grad(f: Callable[[], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f() w.r.t. array x (perturbed in place)"""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        original = x[idx]
        x[idx] = original + step
        plus = f()
        x[idx] = original - step
        minus = f()
        x[idx] = original
        grad[idx] = (plus - minus) / (2.0 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Max elementwise |a-b| / max(|a|, |b|, floor)"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


# ----- Checkpoint layout -----
# little-endian: uint32 version, uint32 tensor count,
# then per tensor: uint32 rows, uint32 cols, rows*cols float64 row-major

def serialize_parameters(params: Sequence[Parameter]) -> bytes:
    """Flat binary dump of parameter values"""
    chunks = [struct.pack("<II", CHECKPOINT_FORMAT_VERSION, len(params))]
    for p in params:
        rows, cols = p.value.shape
        chunks.append(struct.pack("<II", rows, cols))
        chunks.append(np.ascontiguousarray(p.value, dtype="<f8").tobytes())
    return b"".join(chunks)


def deserialize_parameters(blob: bytes) -> List[np.ndarray]:
    """Inverse of serialize_parameters"""
    try:
        version, count = struct.unpack_from("<II", blob, 0)
    except struct.error as e:
        raise CheckpointError(f"truncated parameter block: {e}", field="format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported parameter format version {version}", field="format_version")
    offset = 8
    arrays = []
    for i in range(count):
        try:
            rows, cols = struct.unpack_from("<II", blob, offset)
        except struct.error:
            raise CheckpointError(f"truncated header for tensor {i}", field="layer_count")
        offset += 8
        n_bytes = rows * cols * 8
        if offset + n_bytes > len(blob):
            raise CheckpointError(f"truncated values for tensor {i}", field="layer_count")
        values = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=offset)
        arrays.append(values.astype(np.float64).reshape(rows, cols))
        offset += n_bytes
    if offset != len(blob):
        raise CheckpointError(f"{len(blob) - offset} trailing bytes after {count} tensors", field="layer_count")
    return arrays


def load_parameters(params: Sequence[Parameter], arrays: Sequence[np.ndarray]):
    """Copy arrays into parameters after checking count and shapes"""
    if len(params) != len(arrays):
        raise CheckpointError(f"expected {len(params)} tensors, found {len(arrays)}", field="layer_count")
    for p, arr in zip(params, arrays):
        if p.value.shape != arr.shape:
            raise CheckpointError(f"{p.name}: expected shape {p.value.shape}, found {arr.shape}", field=p.name)
    for p, arr in zip(params, arrays):
        p.value[...] = arr
