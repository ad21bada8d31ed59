"""Fine- and coarse-scale temporal convolution branches over channel-first tokens."""
from __future__ import annotations

from typing import Dict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .layers import add_bn, bn
from .params import ParamStore, uniform_init

REINJECT = {"fine": "branch.alpha1", "coarse": "branch.alpha2"}


def init_branches(store: ParamStore, cfg: ModelConfig, rng: np.random.Generator) -> None:
    d, e, g = cfg.embed_dim, cfg.expansion_ratio, cfg.groups
    for b in cfg.branches:
        for layer, k in enumerate(cfg.branch_kernels(b)):
            p = f"{b}.tc{layer}"
            store.add(f"{p}.dw.weight", uniform_init(rng, (d, 1, k), k))
            store.add(f"{p}.dw.bias", uniform_init(rng, (d,), k))
            store.add(f"{p}.pw1.weight", uniform_init(rng, (d * e, d // g), d // g))
            store.add(f"{p}.pw1.bias", uniform_init(rng, (d * e,), d // g))
            store.add(f"{p}.pw2.weight", uniform_init(rng, (d, d * e // g), d * e // g))
            store.add(f"{p}.pw2.bias", uniform_init(rng, (d,), d * e // g))
            add_bn(store, f"{p}.bn", d)
            store.add(f"{p}.alpha", np.array(cfg.residual_scale_init))
        if cfg.reinject:
            store.add(REINJECT[b], np.array(cfg.residual_scale_init))


def tc_block(h: Tensor, store: ParamStore, cfg: ModelConfig, branch: str, layer: int,
             train: bool = False) -> Tensor:
    """``h + alpha * BN(PW2(GELU(PW1(GELU(DW(h))))))`` on ``[B, d, N]``."""
    p = f"{branch}.tc{layer}"
    u = ad.conv1d(h, store[f"{p}.dw.weight"], store[f"{p}.dw.bias"], groups=cfg.embed_dim)
    u = ad.gelu(u)
    u = ad.gelu(ad.pointwise_grouped(u, store[f"{p}.pw1.weight"], cfg.groups, store[f"{p}.pw1.bias"]))
    u = ad.pointwise_grouped(u, store[f"{p}.pw2.weight"], cfg.groups, store[f"{p}.pw2.bias"])
    u = bn(u, store, f"{p}.bn", cfg, train)
    return h + store[f"{p}.alpha"] * u


def run_branches(z0: Tensor, store: ParamStore, cfg: ModelConfig, train: bool = False) -> Dict[str, Tensor]:
    """Token streams ``{branch: [B, N, d]}`` for every enabled branch."""
    h0 = ad.transpose(z0, (0, 2, 1))
    out = {}
    for b in cfg.branches:
        h = h0
        for layer in range(len(cfg.branch_kernels(b))):
            h = tc_block(h, store, cfg, b, layer, train)
        z = ad.transpose(h, (0, 2, 1))
        if cfg.reinject:
            z = z + store[REINJECT[b]] * z0
        out[b] = z
    return out
