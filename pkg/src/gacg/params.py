"""Named parameter collections and the finite-difference gradient oracle."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ContractError, NumericsError, ParameterError
from .tensor import Tensor, backward, no_grad


def linear_init(rng, fan_in: int, fan_out: int) -> np.ndarray:
    """Gaussian weight draw scaled by 1/sqrt(fan_in)."""
    return rng.normal((fan_in, fan_out)) / np.sqrt(fan_in)


class ParameterSet:
    """Map from dot-separated names to learnable tensors.

    Names are unique and iteration is always lexicographic, so flattening,
    checkpoints, and initialization order are deterministic.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ParameterError(f"duplicate parameter name '{name}'")
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        for name in self.names():
            yield name, self._params[name]

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def total_size(self) -> int:
        return sum(p.size for p in self._params.values())

    def copy(self) -> "ParameterSet":
        out = ParameterSet()
        for name, p in self.items():
            out.add(name, Tensor(p.data.copy(), requires_grad=True))
        return out

    def copy_from(self, other: "ParameterSet"):
        """Hard-copy values from `other`; names must match exactly."""
        if self.names() != other.names():
            missing = set(other.names()) ^ set(self.names())
            raise ContractError(f"parameter name mismatch: {sorted(missing)}")
        for name, p in other.items():
            mine = self._params[name]
            if mine.shape != p.shape:
                raise ContractError(
                    f"parameter '{name}' shape mismatch: {mine.shape} vs {p.shape}")
            mine.data[...] = p.data

    def flatten(self) -> np.ndarray:
        """All values concatenated in lexicographic name order."""
        if not self._params:
            return np.zeros(0)
        return np.concatenate([self._params[n].data.ravel() for n in self.names()])

    def load_flat(self, vec: np.ndarray):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.total_size():
            raise ContractError(
                f"flat vector has {vec.size} values, expected {self.total_size()}")
        offset = 0
        for name in self.names():
            p = self._params[name]
            p.data[...] = vec[offset:offset + p.size].reshape(p.shape)
            offset += p.size

    def grad_flat(self) -> np.ndarray:
        """All gradients concatenated like `flatten`; absent grads read as 0."""
        chunks = []
        for name in self.names():
            p = self._params[name]
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            chunks.append(np.asarray(g).ravel())
        return np.concatenate(chunks) if chunks else np.zeros(0)


def grad_check(f: Callable[[ParameterSet], Tensor], point: ParameterSet,
               eps: float = 1e-6) -> float:
    """Compare reverse-mode gradients of f against central finite differences.

    Returns the max over all parameter coordinates of
    |fd - ad| / max(1e-12, |fd| + |ad|).  `f` must be deterministic (fix any
    RNG inputs before calling).
    """
    if not (0.0 < eps <= 1e-3):
        raise ParameterError(f"eps must be in (0, 1e-3], got {eps}")

    point.zero_grad()
    loss = f(point)
    if loss.size != 1:
        raise ContractError(f"grad_check needs a scalar-valued f, got {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise NumericsError("f is non-finite at the base point")
    backward(loss)
    ad = point.grad_flat()

    worst = 0.0
    offset = 0
    for name, p in point.items():
        flat = p.data.ravel()
        for i in range(flat.size):
            saved = flat[i]
            with no_grad():
                flat[i] = saved + eps
                hi = float(f(point).data)
                flat[i] = saved - eps
                lo = float(f(point).data)
            flat[i] = saved
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NumericsError(f"f is non-finite probing parameter '{name}'")
            fd = (hi - lo) / (2.0 * eps)
            a = ad[offset + i]
            err = abs(fd - a) / max(1e-12, abs(fd) + abs(a))
            if err > worst:
                worst = err
        offset += p.size
    return worst
