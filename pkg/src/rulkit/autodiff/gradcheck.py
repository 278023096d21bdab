"""Central finite-difference verification of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor, backward, no_grad, zero_grad


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def worst(self) -> str | None:
        if not self.per_param:
            return None
        return max(self.per_param, key=self.per_param.get)


def relative_error(analytic, numeric) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def check_gradients(
    closure: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    epsilon: float = 1e-5,
    n_coords: int = 200,
    seed: int = 0,
) -> GradCheckResult:
    """Compare backprop gradients of ``closure()`` against central differences.

    ``closure`` must be deterministic (dropout off, batchnorm frozen). Up to
    ``n_coords`` coordinates are sampled per parameter; smaller tensors are
    checked in full. Parameters must hold float64 data.
    """
    for name, p in params.items():
        if p.dtype != np.float64:
            raise TypeError(f"gradient check needs float64 parameters; {name} is {p.dtype}")
    zero_grad(params.values())
    loss = closure()
    grads = backward(loss, params)
    rng = np.random.default_rng(seed)
    result = GradCheckResult(0.0)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if flat.size > n_coords:
            coords = rng.choice(flat.size, size=n_coords, replace=False)
        analytic = grads[name].reshape(-1)[coords]
        numeric = np.empty(len(coords))
        with no_grad():
            for j, idx in enumerate(coords):
                orig = flat[idx]
                flat[idx] = orig + epsilon
                f_plus = closure().item()
                flat[idx] = orig - epsilon
                f_minus = closure().item()
                flat[idx] = orig
                numeric[j] = (f_plus - f_minus) / (2 * epsilon)
        if not np.all(np.isfinite(numeric)):
            raise FloatingPointError(f"non-finite finite-difference value for {name}")
        err = float(relative_error(analytic, numeric).max()) if len(coords) else 0.0
        result.per_param[name] = err
        result.max_rel_error = max(result.max_rel_error, err)
    zero_grad(params.values())
    return result
