"""Adaptive token aggregation and the linear classifier."""
from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .exceptions import ConfigurationError
from .params import ParamStore, uniform_init


def init_head(store: ParamStore, cfg: ModelConfig, rng: np.random.Generator) -> None:
    d, K = cfg.embed_dim, cfg.n_classes
    if cfg.aggregation == "adaptive":
        store.add("head.query", uniform_init(rng, (d,), d))
    fan_in = d * len(cfg.branches)
    store.add("head.cls.weight", uniform_init(rng, (fan_in, K), fan_in))
    store.add("head.cls.bias", uniform_init(rng, (K,), fan_in))


def aggregate(z: Tensor, query: Optional[Tensor]) -> Tuple[Tensor, Tensor]:
    """Softmax-weighted token pooling of ``[B, N, d]`` tokens.

    With ``query=None`` the scores are identically zero, which gives uniform
    weights (plain mean pooling) through the same arithmetic path.
    Returns the pooled ``[B, d]`` vectors and the weights ``[B, N]``.
    """
    B, N, d = z.shape
    if query is None:
        scores = Tensor(np.zeros((B, N), dtype=z.dtype))
    else:
        scores = ad.reshape(ad.matmul(z, ad.reshape(query, (d, 1))), (B, N))
    w = ad.softmax(scores, axis=-1)
    pooled = ad.tsum(ad.reshape(w, (B, N, 1)) * z, axis=1)
    return pooled, w


def classify(pooled: Sequence[Tensor], store: ParamStore, cfg: ModelConfig) -> Tensor:
    """Logits ``W^T [p_fine || p_coarse] + b`` (no softmax)."""
    x = pooled[0] if len(pooled) == 1 else ad.concat(list(pooled), axis=-1)
    W = store["head.cls.weight"]
    if x.shape[-1] != W.shape[0] or W.shape[1] != cfg.n_classes:
        raise ConfigurationError(
            f"classifier {W.shape} incompatible with features {x.shape[-1]} and {cfg.n_classes} classes")
    return ad.matmul(x, W) + store["head.cls.bias"]
