"""Shared spatiotemporal tokenization: raw ``C x T`` trials to ``N x d`` tokens.

Stage order inside the convolutional tokenizer::

    temporal conv (1 -> f1, per electrode) -> depthwise spatial conv (x D)
    -> BN -> GELU -> avgpool(p1) -> dropout
    -> separable temporal conv (depthwise k2 + pointwise) -> BN -> GELU
    -> avgpool(p2) -> dropout
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .exceptions import ConfigurationError, DataError
from .layers import add_bn, bn
from .params import ParamStore, uniform_init


def init_tokenizer(store: ParamStore, cfg: ModelConfig, rng: np.random.Generator) -> None:
    k1, k2 = cfg.temporal_kernels
    f1, f2, C, d = cfg.f1, cfg.f2, cfg.n_channels, cfg.embed_dim
    store.add("tok.temporal.weight", uniform_init(rng, (f1, 1, k1), k1))
    store.add("tok.spatial.weight", uniform_init(rng, (f2, C), C))
    add_bn(store, "tok.bn1", f2)
    store.add("tok.sep_dw.weight", uniform_init(rng, (f2, 1, k2), k2))
    store.add("tok.sep_pw.weight", uniform_init(rng, (f2, f2), f2))
    add_bn(store, "tok.bn2", f2)
    if f2 != d:
        store.add("tok.proj.weight", uniform_init(rng, (f2, d), f2))
        store.add("tok.proj.bias", uniform_init(rng, (d,), f2))
    if cfg.use_pe:
        store.add("tok.pos_embed", rng.normal(0.0, 0.02, size=(cfg.n_tokens, d)))


def as_batch(x, dtype) -> Tensor:
    """Coerce a trial ``[C, T]`` or batch ``[B, C, T]`` into a batched tensor."""
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=dtype))
    elif x.dtype != dtype and not x.requires_grad:
        x = Tensor(x.data.astype(dtype))
    if x.ndim == 2:
        x = ad.reshape(x, (1,) + x.shape)
    if x.ndim != 3:
        raise DataError(f"expected a trial [C, T] or batch [B, C, T], got shape {x.shape}")
    if not np.all(np.isfinite(x.data)):
        raise DataError("input contains NaN or Inf")
    return x


def tokenize(x, store: ParamStore, cfg: ModelConfig, train: bool = False,
             rng: Optional[np.random.Generator] = None) -> Tensor:
    """Convolutional feature map ``[B, f2, 1, N]`` of a batch of trials."""
    x = as_batch(x, store.dtype)
    B, C, T = x.shape
    p1, p2 = cfg.pool_sizes
    if T < p1 * p2:
        raise DataError(f"trial length {T} too short: tokenization needs at least {p1 * p2} samples")
    if C != cfg.n_channels:
        raise DataError(f"trial has {C} channels but the model was built for {cfg.n_channels}")
    f1, f2 = cfg.f1, cfg.f2

    # The per-electrode temporal filter bank and the depthwise spatial filter are
    # both linear with nothing in between, so they are evaluated spatial-first:
    # map o mixes electrodes, then is filtered by temporal kernel o // D.
    h = ad.pointwise_grouped(x, store["tok.spatial.weight"])
    kernel = store["tok.temporal.weight"][np.repeat(np.arange(f1), cfg.depth_multiplier)]
    h = ad.conv1d(h, kernel, groups=f2)                                   # [B, f2, T]
    h = ad.gelu(bn(h, store, "tok.bn1", cfg, train))
    h = ad.dropout(ad.avg_pool1d(h, p1), cfg.dropout, train, rng)

    h = ad.conv1d(h, store["tok.sep_dw.weight"], groups=f2)
    h = ad.pointwise_grouped(h, store["tok.sep_pw.weight"], groups=1)
    h = ad.gelu(bn(h, store, "tok.bn2", cfg, train))
    h = ad.dropout(ad.avg_pool1d(h, p2), cfg.dropout, train, rng)
    return ad.reshape(h, (B, f2, 1, h.shape[-1]))


def project_and_encode(f: Tensor, store: ParamStore, cfg: ModelConfig) -> Tensor:
    """Squeeze/transpose to ``[B, N, f2]``, project to ``d``, scale by sqrt(d), add positions."""
    B, f2, one, N = f.shape
    if one != 1 or f2 != cfg.f2:
        raise ConfigurationError(f"feature map {f.shape} does not match f2={cfg.f2}")
    z = ad.transpose(ad.reshape(f, (B, f2, N)), (0, 2, 1))
    if "tok.proj.weight" in store:
        z = ad.matmul(z, store["tok.proj.weight"]) + store["tok.proj.bias"]
    z = ad.scale(z, math.sqrt(cfg.embed_dim))
    if cfg.use_pe:
        pe = store["tok.pos_embed"]
        if pe.shape[0] != N:
            raise ConfigurationError(
                f"{N} tokens do not match the positional table of {pe.shape[0]} "
                f"(model built for n_samples={cfg.n_samples})")
        z = z + pe
    return z
