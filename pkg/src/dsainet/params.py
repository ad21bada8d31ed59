"""Named storage for trainable arrays and non-trainable buffers."""
from __future__ import annotations

from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from .autodiff import Tensor
from .exceptions import ConfigurationError, DataError


class ParamStore:
    """Single owner of all learnable state of a model.

    Parameters are :class:`Tensor` leaves with ``requires_grad=True``; buffers
    (batch-norm running statistics) are plain arrays updated in place.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._params: Dict[str, Tensor] = {}
        self._buffers: Dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params or name in self._buffers:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def add_buffer(self, name: str, value) -> np.ndarray:
        if name in self._params or name in self._buffers:
            raise ConfigurationError(f"duplicate buffer name {name!r}")
        arr = np.array(value, dtype=self.dtype, copy=True)
        self._buffers[name] = arr
        return arr

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise KeyError(f"no parameter named {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def buffer(self, name: str) -> np.ndarray:
        return self._buffers[name]

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self._params.items())

    def buffers(self) -> Iterator[Tuple[str, np.ndarray]]:
        return iter(self._buffers.items())

    def n_trainable(self) -> int:
        return int(sum(t.size for t in self._params.values()))

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {f"param/{k}": v.data.copy() for k, v in self._params.items()}
        state.update({f"buffer/{k}": v.copy() for k, v in self._buffers.items()})
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        expected = {f"param/{k}" for k in self._params} | {f"buffer/{k}" for k in self._buffers}
        missing = expected - set(state)
        unexpected = set(state) - expected
        if strict and (missing or unexpected):
            raise DataError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for key, value in state.items():
            kind, name = key.split("/", 1)
            target = self._params[name].data if kind == "param" else self._buffers[name]
            if target.shape != np.shape(value):
                raise DataError(f"{name}: stored shape {np.shape(value)} != model shape {target.shape}")
            target[...] = value

    def copy_from(self, other: "ParamStore") -> None:
        self.load_state_dict(other.state_dict())

    def save(self, path) -> None:
        np.savez(path, **self.state_dict())

    def load(self, path) -> None:
        with np.load(path) as f:
            self.load_state_dict({k: f[k] for k in f.files})

    def get(self, name: str, default: Optional[Tensor] = None) -> Optional[Tensor]:
        return self._params.get(name, default)


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual default for conv and linear layers."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)
