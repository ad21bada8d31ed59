"""Parameter-store-backed building blocks shared by the model stages."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .params import ParamStore, uniform_init


def add_bn(store: ParamStore, prefix: str, ch: int) -> None:
    store.add(f"{prefix}.weight", np.ones(ch))
    store.add(f"{prefix}.bias", np.zeros(ch))
    store.add_buffer(f"{prefix}.running_mean", np.zeros(ch))
    store.add_buffer(f"{prefix}.running_var", np.ones(ch))


def bn(x: Tensor, store: ParamStore, prefix: str, cfg: ModelConfig, train: bool) -> Tensor:
    """Batch norm over channel axis 1."""
    return ad.batch_norm(x, store[f"{prefix}.weight"], store[f"{prefix}.bias"],
                         store.buffer(f"{prefix}.running_mean"), store.buffer(f"{prefix}.running_var"),
                         train=train, momentum=cfg.bn_momentum, eps=cfg.bn_eps, axis=1)


def add_linear(store: ParamStore, prefix: str, d_in: int, d_out: int, rng: np.random.Generator) -> None:
    store.add(f"{prefix}.weight", uniform_init(rng, (d_in, d_out), d_in))
    store.add(f"{prefix}.bias", uniform_init(rng, (d_out,), d_in))


def linear(x: Tensor, store: ParamStore, prefix: str) -> Tensor:
    return ad.matmul(x, store[f"{prefix}.weight"]) + store[f"{prefix}.bias"]


def add_layer_norm(store: ParamStore, prefix: str, d: int) -> None:
    store.add(f"{prefix}.weight", np.ones(d))
    store.add(f"{prefix}.bias", np.zeros(d))


def layer_norm(x: Tensor, store: ParamStore, prefix: str, cfg: ModelConfig) -> Tensor:
    return ad.layer_norm(x, store[f"{prefix}.weight"], store[f"{prefix}.bias"], eps=cfg.ln_eps)
