"""Trainable-parameter and multiply-accumulate counts for a model configuration."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

from .config import ModelConfig
from .model import DSAINet

MAC_CONVENTION = (
    "MACs per single trial; one multiply-accumulate per weight use in convolutions, "
    "linear layers and attention products (QK^T and PV). The temporal filter bank is "
    "counted per electrode as f1*C*T*k1. Normalisation, activations, softmax, pooling, "
    "dropout, bias and residual additions and scalar gates are excluded."
)


def count_parameters(cfg: ModelConfig) -> int:
    """Exact trainable total, summed over a freshly built parameter store."""
    return DSAINet(cfg).n_parameters()


@dataclass
class MacReport:
    total: int
    breakdown: Dict[str, int]

    def format(self) -> str:
        lines = [f"{name:<14} {macs:>14,d}" for name, macs in self.breakdown.items()]
        lines.append(f"{'total':<14} {self.total:>14,d}")
        return "\n".join(lines)


def _mha_macs(N: int, d: int) -> int:
    return 4 * N * d * d + 2 * N * N * d


def count_macs(cfg: ModelConfig) -> MacReport:
    C, T, d, N = cfg.n_channels, cfg.n_samples, cfg.embed_dim, cfg.n_tokens
    f1, f2 = cfg.f1, cfg.f2
    k1, k2 = cfg.temporal_kernels
    T1 = T // cfg.pool_sizes[0]
    out: Dict[str, int] = {}
    out["tokenizer"] = f1 * C * T * k1 + f2 * C * T + f2 * k2 * T1 + f2 * f2 * T1
    out["projection"] = N * f2 * d if f2 != d else 0
    hidden = d * cfg.expansion_ratio
    out["branches"] = sum(
        N * d * k + 2 * N * d * hidden // cfg.groups
        for b in cfg.branches for k in cfg.branch_kernels(b))
    block = _mha_macs(N, d) + 2 * N * d * d * cfg.ffn_ratio
    nb = len(cfg.branches)
    out["intra"] = cfg.attn_layers * nb * block if cfg.use_intra else 0
    out["inter"] = cfg.attn_layers * 2 * block if cfg.interacting else 0
    out["aggregation"] = nb * (2 * N * d if cfg.aggregation == "adaptive" else N * d)
    out["classifier"] = nb * d * cfg.n_classes
    return MacReport(sum(out.values()), out)
