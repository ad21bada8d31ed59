"""Intra-branch self-attention refinement and inter-branch cross-attention."""
from __future__ import annotations

import math
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .exceptions import DimensionError
from .layers import add_layer_norm, add_linear, layer_norm, linear
from .params import ParamStore

# exported map families
INTRA = {"fine": "intra_fine", "coarse": "intra_coarse"}
CROSS = {"fine": "cross_fine_from_coarse", "coarse": "cross_coarse_from_fine"}
BETA = {"fine": "beta1", "coarse": "beta2"}


def init_mha(store: ParamStore, prefix: str, d: int, rng: np.random.Generator) -> None:
    for name in ("q", "k", "v", "o"):
        add_linear(store, f"{prefix}.{name}", d, d, rng)


def init_ffn(store: ParamStore, prefix: str, d: int, ratio: int, rng: np.random.Generator) -> None:
    add_linear(store, f"{prefix}.fc1", d, d * ratio, rng)
    add_linear(store, f"{prefix}.fc2", d * ratio, d, rng)


def init_attention(store: ParamStore, cfg: ModelConfig, rng: np.random.Generator) -> None:
    d = cfg.embed_dim
    for m in range(cfg.attn_layers):
        if cfg.use_intra:
            for b in cfg.branches:
                p = f"intra.{b}.{m}"
                init_mha(store, f"{p}.mha", d, rng)
                add_layer_norm(store, f"{p}.ln1", d)
                init_ffn(store, f"{p}.ffn", d, cfg.ffn_ratio, rng)
                add_layer_norm(store, f"{p}.ln2", d)
    for m in range(cfg.attn_layers):
        if cfg.interacting:
            for b in cfg.branches:
                p = f"inter.{b}.{m}"
                init_mha(store, f"{p}.mha", d, rng)
                add_layer_norm(store, f"{p}.ln1", d)
                init_ffn(store, f"{p}.ffn", d, cfg.ffn_ratio, rng)
                add_layer_norm(store, f"{p}.ln2", d)
                store.add(f"{p}.{BETA[b]}", np.array(cfg.interaction_init))


def mha(q_src: Tensor, kv_src: Tensor, store: ParamStore, prefix: str, n_heads: int,
        dropout: float = 0.0, train: bool = False,
        rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, np.ndarray]:
    """Multi-head scaled dot-product attention of ``q_src`` over ``kv_src``.

    Both inputs are ``[B, N, d]``. Returns the mixed output and the
    attention probabilities ``[B, heads, N, N]`` (before dropout).
    """
    if q_src.shape != kv_src.shape:
        raise DimensionError(f"query tokens {q_src.shape} and key/value tokens {kv_src.shape} differ")
    B, N, d = q_src.shape
    if d % n_heads:
        raise DimensionError(f"{n_heads} heads do not divide embed dim {d}")
    hd = d // n_heads

    def heads(t: Tensor) -> Tensor:
        return ad.transpose(ad.reshape(t, (B, N, n_heads, hd)), (0, 2, 1, 3))

    q = heads(linear(q_src, store, f"{prefix}.q"))
    k = heads(linear(kv_src, store, f"{prefix}.k"))
    v = heads(linear(kv_src, store, f"{prefix}.v"))
    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(hd))
    probs = ad.softmax(scores, axis=-1)
    ctx = ad.matmul(ad.dropout(probs, dropout, train, rng), v)
    ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (B, N, d))
    return linear(ctx, store, f"{prefix}.o"), probs.data


def ffn(x: Tensor, store: ParamStore, prefix: str, dropout: float = 0.0, train: bool = False,
        rng: Optional[np.random.Generator] = None) -> Tensor:
    h = ad.dropout(ad.gelu(linear(x, store, f"{prefix}.fc1")), dropout, train, rng)
    return linear(h, store, f"{prefix}.fc2")


def _residual_block(z: Tensor, attn: Tensor, store: ParamStore, p: str, cfg: ModelConfig,
                    train: bool, rng) -> Tensor:
    zbar = layer_norm(z + attn, store, f"{p}.ln1", cfg)
    return layer_norm(zbar + ffn(zbar, store, f"{p}.ffn", cfg.dropout, train, rng), store, f"{p}.ln2", cfg)


def intra_refine(z: Tensor, store: ParamStore, cfg: ModelConfig, branch: str, train: bool = False,
                 rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, List[np.ndarray]]:
    """Post-norm self-attention + FFN, ``attn_layers`` times. Returns tokens and per-layer maps."""
    maps = []
    for m in range(cfg.attn_layers):
        p = f"intra.{branch}.{m}"
        a, probs = mha(z, z, store, f"{p}.mha", cfg.n_heads, cfg.dropout, train, rng)
        z = _residual_block(z, a, store, p, cfg, train, rng)
        maps.append(probs)
    return z, maps


def inter_interact(z_f: Tensor, z_c: Tensor, store: ParamStore, cfg: ModelConfig, train: bool = False,
                   rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, Tensor, Dict[str, list]]:
    """Symmetric cross-attention between the streams; both directions read pre-update inputs."""
    maps: Dict[str, list] = {CROSS["fine"]: [], CROSS["coarse"]: []}
    for m in range(cfg.attn_layers):
        pf, pc = f"inter.fine.{m}", f"inter.coarse.{m}"
        a_f, probs_f = mha(z_f, z_c, store, f"{pf}.mha", cfg.n_heads, cfg.dropout, train, rng)
        a_c, probs_c = mha(z_c, z_f, store, f"{pc}.mha", cfg.n_heads, cfg.dropout, train, rng)
        new_f = _residual_block(z_f, store[f"{pf}.beta1"] * a_f, store, pf, cfg, train, rng)
        new_c = _residual_block(z_c, store[f"{pc}.beta2"] * a_c, store, pc, cfg, train, rng)
        z_f, z_c = new_f, new_c
        maps[CROSS["fine"]].append(probs_f)
        maps[CROSS["coarse"]].append(probs_c)
    return z_f, z_c, maps
