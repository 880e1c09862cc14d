"""Named learnable tensors with gradient slots, addressable by stable path."""

from __future__ import annotations

import numpy as np

from .tensor import NumericsError, Tensor


class ParamStore:
    """Maps stable string paths to learnable tensors.

    Names are unique; every parameter has a gradient slot of the same
    shape (``None`` until a backward pass reaches it).  Scalar learnables
    are stored as 1-element tensors.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name: {name}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def n_elements(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def grad(self, name: str) -> np.ndarray:
        t = self._params[name]
        return t.grad if t.grad is not None else np.zeros_like(t.data)

    def gradients(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Fill every gradient slot from a scalar loss.

        Parameters unreachable from the loss get exact zeros; constants
        (e.g. a teacher store evaluated under ``no_grad``) are never touched.
        """
        self.zero_grads()
        loss.backward()
        return {name: self.grad(name) for name in self._params}

    def copy(self) -> "ParamStore":
        dup = ParamStore()
        for name, t in self._params.items():
            dup.add(name, t.data.copy())
        return dup

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise NumericsError(
                f"parameter name mismatch: missing={sorted(missing)[:3]} extra={sorted(extra)[:3]}"
            )
        for name, arr in arrays.items():
            t = self._params[name]
            if arr.shape != t.data.shape:
                raise NumericsError(
                    f"shape mismatch for {name}: {arr.shape} vs {t.data.shape}"
                )
            t.data = np.asarray(arr, dtype=np.float64).copy()
