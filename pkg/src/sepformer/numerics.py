"""Tensor substrate: differentiable primitives, Adam, RNG and checkpoints.

Tensors are ``torch.Tensor`` values; reverse-mode differentiation comes from
torch's dynamically recorded tape. The wrappers here pin down the semantics
the rest of the package relies on (normalized sampling coordinates, border
clamping, finiteness checks, the checkpoint container layout).
"""

from __future__ import annotations

import contextlib
import math
import struct
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

Tensor = torch.Tensor

CHECKPOINT_MAGIC = b"SEPF"
CHECKPOINT_VERSION = 1
DTYPE_CODES = {torch.float32: 0, torch.float64: 1}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


def _finite(x: Tensor, op: str) -> Tensor:
    if not bool(torch.isfinite(x).all()):
        raise NonFiniteError(f"{op} produced non-finite values")
    return x


@contextlib.contextmanager
def precision(dtype: torch.dtype = torch.float64) -> Iterator[None]:
    """Temporarily switch the default floating dtype (f64 for gradient checks)."""
    previous = torch.get_default_dtype()
    torch.set_default_dtype(dtype)
    try:
        yield
    finally:
        torch.set_default_dtype(previous)


def tensor(data, requires_grad: bool = False, dtype: torch.dtype | None = None) -> Tensor:
    t = torch.as_tensor(np.asarray(data), dtype=dtype or torch.get_default_dtype()).clone()
    _finite(t, "tensor")
    return t.requires_grad_(requires_grad)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.dim() != 2 or b.dim() != 2:
        raise ValueError(f"matmul expects 2-D operands, got {tuple(a.shape)} and {tuple(b.shape)}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {tuple(a.shape)} x {tuple(b.shape)}")
    return _finite(a @ b, "matmul")


def _check_axis(x: Tensor, axis: int) -> int:
    if not -x.dim() <= axis < x.dim():
        raise ValueError(f"axis {axis} out of range for rank {x.dim()}")
    return axis


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return _finite(torch.softmax(x, dim=_check_axis(x, axis)), "softmax")


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the optional affine terms."""
    out = F.layer_norm(x, x.shape[-1:], gain, bias, eps)
    return _finite(out, "layer_norm")


def sigmoid(x: Tensor) -> Tensor:
    return torch.sigmoid(x)


def inverse_sigmoid(x: Tensor, eps: float = 1e-5) -> Tensor:
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = x.clamp(eps, 1 - eps)
    return torch.log(x / (1 - x))


def relu(x: Tensor) -> Tensor:
    return torch.relu(x)


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0,
           bias: Tensor | None = None) -> Tensor:
    """2-D cross-correlation.

    ``x`` may be ``H×W``, ``C×H×W`` or ``B×C×H×W``; ``kernel`` is either
    ``kh×kw`` (single channel) or ``Cout×Cin×kh×kw``. The output keeps the
    leading rank of ``x``.
    """
    rank = x.dim()
    if rank == 2:
        x4 = x[None, None]
    elif rank == 3:
        x4 = x[None]
    elif rank == 4:
        x4 = x
    else:
        raise ValueError(f"conv2d input must be rank 2-4, got {rank}")
    k4 = kernel[None, None] if kernel.dim() == 2 else kernel
    if k4.shape[1] != x4.shape[1]:
        raise ValueError(f"kernel expects {k4.shape[1]} input channels, got {x4.shape[1]}")
    out = F.conv2d(x4, k4, bias, stride=stride, padding=padding)
    if rank == 2:
        out = out[0, 0]
    elif rank == 3:
        out = out[0]
    return _finite(out, "conv2d")


def to_grid(points: Tensor) -> Tensor:
    """Map normalized [0, 1] coordinates to grid_sample's [-1, 1] frame."""
    return points * 2.0 - 1.0


def bilinear_sample(feat: Tensor, points: Tensor) -> Tensor:
    """Sample ``feat`` (C×H×W) at normalized ``points`` (N×2, x then y).

    Lattice node ``(j, i)`` sits at ``((j + 0.5) / W, (i + 0.5) / H)``, the
    centre of its pixel, so feature maps of different strides share one
    normalized frame. Points beyond the outermost nodes clamp to the border.
    """
    if feat.dim() != 3:
        raise ValueError("feat must be C×H×W")
    if points.dim() != 2 or points.shape[-1] != 2:
        raise ValueError("points must be N×2")
    if points.shape[0] == 0:
        return feat.new_zeros((0, feat.shape[0]))
    grid = to_grid(points)[None, None]  # 1×1×N×2
    out = F.grid_sample(feat[None], grid, mode="bilinear", padding_mode="border",
                        align_corners=False)
    return _finite(out[0, :, 0, :].transpose(0, 1), "bilinear_sample")


# -- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    exp_avg: list[Tensor] = field(default_factory=list)
    exp_avg_sq: list[Tensor] = field(default_factory=list)


def adam_step(params: list[Tensor], grads: list[Tensor], state: AdamState, lr: float,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update, applied in place to ``params``."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"grad shape {tuple(g.shape)} != param shape {tuple(p.shape)}")
        if not bool(torch.isfinite(g).all()):
            raise NonFiniteError("non-finite gradient, step aborted")
    if not state.exp_avg:
        state.exp_avg = [torch.zeros_like(p) for p in params]
        state.exp_avg_sq = [torch.zeros_like(p) for p in params]
    state.step += 1
    beta1, beta2 = betas
    bc1 = 1 - beta1 ** state.step
    bc2 = 1 - beta2 ** state.step
    step_size = lr / bc1
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.exp_avg, state.exp_avg_sq):
            m.mul_(beta1).add_(g, alpha=1 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
            denom = (v / bc2).sqrt_().add_(eps)
            p.addcdiv_(m, denom, value=-step_size)
    return state


class Adam:
    """Thin stateful wrapper over :func:`adam_step` for a fixed parameter list."""

    def __init__(self, params: Iterable[Tensor], lr: float = 3e-5,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = [p for p in params if p.requires_grad]
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else torch.zeros_like(p) for p in self.params]
        adam_step(self.params, grads, self.state, self.lr, self.betas, self.eps)


def cosine_lr(step: int, total_steps: int, base_lr: float, min_lr: float = 0.0) -> float:
    """Cosine annealing from ``base_lr`` at step 0 to ``min_lr`` at ``total_steps``."""
    if total_steps <= 0:
        return base_lr
    t = min(max(step, 0), total_steps) / total_steps
    return min_lr + 0.5 * (base_lr - min_lr) * (1 + math.cos(math.pi * t))


# -- randomness --------------------------------------------------------------

class RandomSource:
    """Seeded PCG64 stream; the only source of randomness in the package."""

    algorithm = "PCG64"

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFF_FFFF_FFFF_FFFF
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, n: int) -> list["RandomSource"]:
        children = np.random.SeedSequence(self.seed).spawn(n)
        return [RandomSource(int(c.generate_state(1, dtype=np.uint64)[0])) for c in children]

    def integers(self, low: int, high: int | None = None, size=None):
        return self.generator.integers(low, high, size=size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def random(self, size=None):
        return self.generator.random(size)

    def choice(self, seq, size=None, replace: bool = True):
        return self.generator.choice(seq, size=size, replace=replace)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def torch_seed(self) -> int:
        return int(self.generator.integers(0, 2**63 - 1))


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(path: str | Path, tensors: Mapping[str, Tensor]) -> None:
    """Write tensors to the SEPF container.

    Layout (all integers u32 little-endian): magic ``SEPF``, version, entry
    count, then per entry the name length, UTF-8 name, dtype code
    (0 = f32, 1 = f64), rank, dims, and the raw little-endian values.
    """
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(tensors))]
    for name, t in tensors.items():
        t = t.detach().cpu().contiguous()
        if t.dtype not in DTYPE_CODES:
            t = t.float()
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<II", DTYPE_CODES[t.dtype], t.dim()))
        chunks.append(struct.pack(f"<{t.dim()}I", *t.shape))
        np_dtype = "<f4" if t.dtype == torch.float32 else "<f8"
        chunks.append(t.numpy().astype(np_dtype, copy=False).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path) -> dict[str, Tensor]:
    buf = Path(path).read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a SEPF checkpoint")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    out: dict[str, Tensor] = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos:pos + n].decode("utf-8")
        pos += n
        code, rank = struct.unpack_from("<II", buf, pos)
        pos += 8
        dims = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        if code not in CODE_DTYPES:
            raise ValueError(f"{path}: unknown dtype code {code}")
        np_dtype = np.dtype("<f4") if code == 0 else np.dtype("<f8")
        size = int(np.prod(dims, dtype=np.int64))
        values = np.frombuffer(buf, dtype=np_dtype, count=size, offset=pos)
        pos += size * np_dtype.itemsize
        out[name] = torch.from_numpy(values.reshape(dims).copy())
    if pos != len(buf):
        raise ValueError(f"{path}: {len(buf) - pos} trailing bytes")
    return out


# -- gradient checking -------------------------------------------------------

def numerical_gradient(fn, inputs: list[Tensor], h: float = 1e-5) -> list[Tensor]:
    """Central finite differences of scalar ``fn(*inputs)`` w.r.t. each input."""
    grads = []
    with torch.no_grad():
        for x in inputs:
            g = torch.zeros_like(x)
            flat = x.view(-1)
            gflat = g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                fp = float(fn(*inputs))
                flat[i] = orig - h
                fm = float(fn(*inputs))
                flat[i] = orig
                gflat[i] = (fp - fm) / (2 * h)
            grads.append(g)
    return grads


def gradient_relative_error(fn, inputs: list[Tensor], h: float = 1e-5) -> float:
    """Largest relative error between autograd and finite-difference gradients."""
    leaves = [x.detach().clone().requires_grad_(True) for x in inputs]
    out = fn(*leaves)
    analytic = torch.autograd.grad(out, leaves, allow_unused=True)
    numeric = numerical_gradient(fn, [x.detach().clone() for x in leaves], h)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = torch.zeros_like(n) if a is None else a
        scale = max(float(a.norm()), float(n.norm()), 1e-8)
        worst = max(worst, float((a - n).norm()) / scale)
    return worst
