"""
Dense float64 tensor primitives and the finite-difference gradient oracle.

Tensors are ``torch.Tensor`` values in float64; reverse-mode autodiff comes from
torch.autograd. ``grad_check`` compares autograd gradients against central finite
differences and is used to validate every trainable loss in the package.
"""
import math
from collections.abc import Callable, Mapping
from typing import NamedTuple

import torch
import torch.nn.functional as F
from pydantic import BaseModel, model_validator

from topomotion.exceptions import DimensionError, NumericalError, ValidationError
from topomotion.utils.seeding import torch_generator

DTYPE = torch.float64

# Stand-in for -inf in attention biases; softmax gives it exactly zero mass.
NEG_SENTINEL = torch.finfo(DTYPE).min


class SoftmaxResult(NamedTuple):
    probs: torch.Tensor
    empty_rows: torch.Tensor  # bool, True where every entry of the row was masked


class GradEntry(BaseModel):
    name: str
    analytic: float
    numeric: float
    abs_err: float


class GradReport(BaseModel):
    max_abs_err: float
    max_rel_err: float
    per_parameter: list[GradEntry]
    tol: float
    passed: bool

    @model_validator(mode='after')
    def _check_max(self) -> 'GradReport':
        expected = max((e.abs_err for e in self.per_parameter), default=0.0)
        if self.max_abs_err != expected:
            raise ValueError("max_abs_err must equal the maximum per-parameter abs_err")
        return self


def tensor(data, shape: tuple[int, ...] | None = None) -> torch.Tensor:
    """Build a float64 tensor, optionally reshaping a flat row-major buffer."""
    t = torch.as_tensor(data, dtype=DTYPE)
    if shape is not None:
        if math.prod(shape) != t.numel():
            raise DimensionError(f"Cannot view {t.numel()} values as shape {tuple(shape)}")
        t = t.reshape(shape)
    return t


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """
    Rank-2 matrix product.

    :raises DimensionError: If the inner extents disagree
    """
    if a.dim() != 2 or b.dim() != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"Cannot multiply shapes {tuple(a.shape)} and {tuple(b.shape)}")
    return a @ b


def is_masked(bias: torch.Tensor) -> torch.Tensor:
    return bias <= NEG_SENTINEL


def softmax_rows(x: torch.Tensor, additive_bias: torch.Tensor | None = None) -> SoftmaxResult:
    """
    Row-wise softmax over the last axis with an optional additive bias.

    Bias entries at or below ``NEG_SENTINEL`` (including -inf) are masked: they get
    exactly zero probability. Rows whose entries are all masked come back as zeros
    and are flagged in ``empty_rows``.

    :param x: Logits, rows along the last axis
    :param additive_bias: Bias with the same shape as x
    :return: SoftmaxResult(probs, empty_rows)
    :raises DimensionError: If the bias shape differs from x
    """
    if additive_bias is None:
        masked = torch.zeros_like(x, dtype=torch.bool)
        logits = x
    else:
        if additive_bias.shape != x.shape:
            raise DimensionError(
                f"Bias shape {tuple(additive_bias.shape)} does not match logits {tuple(x.shape)}"
            )
        masked = is_masked(additive_bias)
        logits = x + torch.where(masked, torch.zeros_like(additive_bias), additive_bias)

    logits = logits.masked_fill(masked, -math.inf)
    empty_rows = masked.all(dim=-1)
    row_max = logits.amax(dim=-1, keepdim=True)
    row_max = torch.where(empty_rows.unsqueeze(-1), torch.zeros_like(row_max), row_max).detach()
    weights = torch.exp(logits - row_max)
    denom = weights.sum(dim=-1, keepdim=True)
    denom = torch.where(denom == 0, torch.ones_like(denom), denom)
    return SoftmaxResult(weights / denom, empty_rows)


def gelu(x: torch.Tensor) -> torch.Tensor:
    """GELU, tanh approximation."""
    return F.gelu(x, approximate='tanh')


def layer_norm(x: torch.Tensor, gain: torch.Tensor, offset: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """
    Normalize over the last axis, then apply ``gain`` and ``offset``.

    :raises DimensionError: If gain/offset do not match the last extent of x
    """
    width = x.shape[-1]
    if gain.shape != (width,) or offset.shape != (width,):
        raise DimensionError(
            f"Gain {tuple(gain.shape)} / offset {tuple(offset.shape)} do not match last extent {width}"
        )
    return F.layer_norm(x, (width,), gain, offset, eps)


def grad_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Mapping[str, torch.Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_samples: int = 32,
    seed: int = 0,
    atol: float = 0.0,
) -> GradReport:
    """
    Compare autograd gradients with central finite differences.

    ``loss_fn`` is called with no arguments and must read ``params`` (leaf tensors
    with ``requires_grad``) when building its scalar loss. Tensors with more than
    ``max_samples`` elements are checked on a seeded subset of that size.

    :param loss_fn: Deterministic scalar loss closure
    :param params: Named parameters to differentiate
    :param eps: Finite-difference step, in (0, 1e-2]
    :param tol: Pass threshold on the maximum relative error
    :param max_samples: Elements checked per tensor (at least 32)
    :param seed: Seed for subset sampling
    :param atol: Entries whose absolute error is at most atol pass regardless of relative error
    :return: GradReport
    :raises NumericalError: If the loss is not finite
    """
    if not 0 < eps <= 1e-2:
        raise ValidationError(f"eps must lie in (0, 1e-2], got {eps}")
    max_samples = max(max_samples, 32)
    names = list(params)
    tensors = [params[name] for name in names]

    loss = loss_fn()
    if not torch.isfinite(loss).all():
        raise NumericalError(f"Loss is not finite: {loss.item()}")
    analytic = torch.autograd.grad(loss, tensors, allow_unused=True)

    def evaluate() -> float:
        with torch.no_grad():
            value = loss_fn()
        if not torch.isfinite(value).all():
            raise NumericalError(f"Loss became non-finite during finite differencing: {value.item()}")
        return value.item()

    generator = torch_generator(seed, "grad_check")
    entries: list[GradEntry] = []
    max_rel = 0.0
    failures = 0
    for name, param, grad in zip(names, tensors, analytic):
        flat_grad = grad.reshape(-1) if grad is not None else torch.zeros(param.numel(), dtype=param.dtype)
        if param.numel() <= max_samples:
            indices = range(param.numel())
        else:
            indices = torch.randperm(param.numel(), generator=generator)[:max_samples].tolist()
        flat = param.data.view(-1)
        for index in indices:
            original = flat[index].item()
            flat[index] = original + eps
            upper = evaluate()
            flat[index] = original - eps
            lower = evaluate()
            flat[index] = original
            numeric = (upper - lower) / (2 * eps)
            a = flat_grad[index].item()
            abs_err = abs(a - numeric)
            rel_err = abs_err / max(abs(a), abs(numeric), 1e-8)
            max_rel = max(max_rel, rel_err)
            if rel_err >= tol and abs_err > atol:
                failures += 1
            entries.append(GradEntry(name=f"{name}[{index}]", analytic=a, numeric=numeric, abs_err=abs_err))

    max_abs = max((e.abs_err for e in entries), default=0.0)
    return GradReport(
        max_abs_err=max_abs,
        max_rel_err=max_rel,
        per_parameter=entries,
        tol=tol,
        passed=failures == 0,
    )
