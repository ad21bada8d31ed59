"""Configuration records, dataset presets, ablation switches and INI config files."""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

from .exceptions import ConfigurationError


@dataclass(frozen=True)
class TokenizerConfig:
    f1: int = 16
    temporal_kernels: Tuple[int, int] = (64, 16)
    depth_multiplier: int = 2
    pool_sizes: Tuple[int, int] = (4, 8)
    embed_dim: int = 40
    dropout: float = 0.25

    @property
    def f2(self) -> int:
        return self.f1 * self.depth_multiplier


@dataclass(frozen=True)
class BranchConfig:
    branch: str
    kernel_sizes: Tuple[int, ...]
    expansion_ratio: int = 4
    groups: int = 4
    residual_scale_init: float = 1.0

    @property
    def n_blocks(self) -> int:
        return len(self.kernel_sizes)

    @property
    def span(self) -> int:
        """Receptive field of the stacked depthwise kernels."""
        return sum(self.kernel_sizes) - len(self.kernel_sizes) + 1


@dataclass(frozen=True)
class AttentionConfig:
    embed_dim: int = 40
    n_heads: int = 4
    ffn_ratio: int = 2
    attn_layers: int = 1
    dropout: float = 0.25
    interaction_init: float = 1.0

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.n_heads


@dataclass(frozen=True)
class HeadConfig:
    embed_dim: int
    n_classes: int
    aggregation: str = "adaptive"
    n_branches: int = 2


AGGREGATIONS = ("adaptive", "mean")


@dataclass(frozen=True)
class ModelConfig:
    """Every architecture hyperparameter plus design knobs and ablation switches.

    Defaults are the fixed cross-dataset settings; ``n_channels``,
    ``n_samples`` and ``n_classes`` describe the data.
    """

    n_channels: int = 22
    n_samples: int = 1000
    n_classes: int = 4
    # tokenizer
    f1: int = 16
    temporal_kernels: Tuple[int, int] = (64, 16)
    depth_multiplier: int = 2
    pool_sizes: Tuple[int, int] = (4, 8)
    embed_dim: int = 40
    dropout: float = 0.25
    # temporal branches
    fine_kernels: Tuple[int, ...] = (3, 7)
    coarse_kernels: Tuple[int, ...] = (11, 15)
    expansion_ratio: int = 4
    groups: int = 4
    residual_scale_init: float = 1.0
    reinject: bool = True
    # attention
    n_heads: int = 4
    ffn_ratio: int = 2
    attn_layers: int = 1
    interaction_init: float = 1.0
    # head
    aggregation: str = "adaptive"
    # ablation switches
    use_fine: bool = True
    use_coarse: bool = True
    use_intra: bool = True
    use_inter: bool = True
    use_pe: bool = True
    # normalisation constants
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    ln_eps: float = 1e-5

    def __post_init__(self):
        for name in ("temporal_kernels", "pool_sizes", "fine_kernels", "coarse_kernels"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        self.validate()

    # -- derived quantities -------------------------------------------
    @property
    def f2(self) -> int:
        return self.f1 * self.depth_multiplier

    @property
    def n_tokens(self) -> int:
        return (self.n_samples // self.pool_sizes[0]) // self.pool_sizes[1]

    @property
    def min_samples(self) -> int:
        return 2 * self.pool_sizes[0] * self.pool_sizes[1]

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.n_heads

    @property
    def branches(self) -> Tuple[str, ...]:
        return tuple(b for b, on in (("fine", self.use_fine), ("coarse", self.use_coarse)) if on)

    @property
    def interacting(self) -> bool:
        """Cross-branch attention runs only when both branches exist."""
        return self.use_inter and len(self.branches) == 2

    def branch_kernels(self, branch: str) -> Tuple[int, ...]:
        return {"fine": self.fine_kernels, "coarse": self.coarse_kernels}[branch]

    @property
    def tokenizer(self) -> TokenizerConfig:
        return TokenizerConfig(self.f1, self.temporal_kernels, self.depth_multiplier,
                               self.pool_sizes, self.embed_dim, self.dropout)

    def branch_config(self, branch: str) -> BranchConfig:
        return BranchConfig(branch, self.branch_kernels(branch), self.expansion_ratio,
                            self.groups, self.residual_scale_init)

    @property
    def attention(self) -> AttentionConfig:
        return AttentionConfig(self.embed_dim, self.n_heads, self.ffn_ratio, self.attn_layers,
                               self.dropout, self.interaction_init)

    @property
    def head(self) -> HeadConfig:
        return HeadConfig(self.embed_dim, self.n_classes, self.aggregation, len(self.branches))

    # -- validation -----------------------------------------------------
    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigurationError(msg)

        need(self.n_channels >= 1, "n_channels must be >= 1")
        need(self.n_classes >= 2, "n_classes must be >= 2")
        need(self.f1 >= 1 and self.depth_multiplier >= 1, "f1 and depth_multiplier must be >= 1")
        need(len(self.temporal_kernels) == 2 and min(self.temporal_kernels) >= 1,
             "temporal_kernels must be two positive sizes")
        need(len(self.pool_sizes) == 2 and min(self.pool_sizes) >= 1, "pool_sizes must be two positive sizes")
        need(self.n_tokens >= 2,
             f"n_samples={self.n_samples} too short: need at least {self.min_samples} samples "
             f"for pools {self.pool_sizes}")
        need(self.embed_dim >= 1 and self.expansion_ratio >= 1, "embed_dim and expansion_ratio must be >= 1")
        need(self.groups >= 1 and self.embed_dim % self.groups == 0
             and (self.embed_dim * self.expansion_ratio) % self.groups == 0,
             f"groups={self.groups} must divide embed_dim={self.embed_dim} and "
             f"{self.embed_dim * self.expansion_ratio}")
        for b in ("fine", "coarse"):
            ks = self.branch_kernels(b)
            need(len(ks) >= 1, f"{b} branch needs at least one block")
            need(all(k >= 3 and k % 2 == 1 for k in ks), f"{b} kernel sizes must be odd and >= 3, got {ks}")
        need(self.n_heads >= 1 and self.embed_dim % self.n_heads == 0,
             f"n_heads={self.n_heads} must divide embed_dim={self.embed_dim}")
        need(self.attn_layers >= 1, "attn_layers must be >= 1")
        need(self.ffn_ratio >= 1, "ffn_ratio must be >= 1")
        need(0.0 <= self.dropout < 1.0, "dropout must be in [0, 1)")
        need(self.aggregation in AGGREGATIONS, f"aggregation must be one of {AGGREGATIONS}")
        need(self.use_fine or self.use_coarse, "at least one temporal branch must be enabled")
        need(self.bn_eps > 0 and self.ln_eps > 0, "normalisation eps must be positive")

    def with_data(self, n_channels: int, n_samples: int, n_classes: int) -> "ModelConfig":
        return replace(self, n_channels=n_channels, n_samples=n_samples, n_classes=n_classes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        return config_hash(self.to_dict())


def config_hash(*records: dict) -> str:
    blob = json.dumps(records, sort_keys=True, default=list).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ----------------------------------------------------------------------------
# ablations
# ----------------------------------------------------------------------------
def single_branch_mode(cfg: ModelConfig, keep: str) -> ModelConfig:
    """Keep only the ``keep`` branch ('fine' or 'coarse')."""
    if keep not in ("fine", "coarse"):
        raise ConfigurationError(f"unknown branch {keep!r}")
    return replace(cfg, use_fine=keep == "fine", use_coarse=keep == "coarse")


def toggle_branch(cfg: ModelConfig, branch: str) -> ModelConfig:
    """Flip one branch on/off; disabling the last enabled branch is rejected."""
    if branch == "fine":
        return replace(cfg, use_fine=not cfg.use_fine)
    if branch == "coarse":
        return replace(cfg, use_coarse=not cfg.use_coarse)
    raise ConfigurationError(f"unknown branch {branch!r}")


ABLATIONS = {
    "full": {},
    "no_pe": {"use_pe": False},
    "single_fine": {"use_coarse": False},
    "single_coarse": {"use_fine": False},
    "no_interaction": {"use_intra": False, "use_inter": False},
    "no_intra": {"use_intra": False},
    "no_inter": {"use_inter": False},
    "mean_pool": {"aggregation": "mean"},
}


def ablate(cfg: ModelConfig, name: str) -> ModelConfig:
    try:
        return replace(cfg, **ABLATIONS[name])
    except KeyError:
        raise ConfigurationError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}") from None


# ----------------------------------------------------------------------------
# training config and dataset presets
# ----------------------------------------------------------------------------
@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-3
    max_epochs: int = 100
    weight_decay: float = 1e-4
    decoupled_weight_decay: bool = False
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    val_fraction: float = 0.2
    dtype: str = "float64"

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be >= 0")
        if self.max_epochs < 1:
            raise ConfigurationError("max_epochs must be >= 1")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be >= 0")
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigurationError("val_fraction must be in (0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError("dtype must be float32 or float64")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class DatasetPreset:
    subjects: int
    n_channels: int
    sample_rate: int
    trial_seconds: int
    n_classes: int
    overlap: float
    batch_size: int
    learning_rate: float
    max_epochs: int
    protocol: str

    @property
    def n_samples(self) -> int:
        return self.sample_rate * self.trial_seconds


DATASETS: Dict[str, DatasetPreset] = {
    "BCIC-IV-2a": DatasetPreset(9, 22, 250, 4, 4, 0.0, 32, 1e-3, 100, "loso"),
    "BCIC-IV-2b": DatasetPreset(9, 3, 250, 4, 2, 0.0, 32, 1e-3, 100, "loso"),
    "Zhou2016": DatasetPreset(4, 14, 200, 5, 3, 0.0, 32, 1e-3, 100, "loso"),
    "OpenBMI": DatasetPreset(54, 20, 250, 4, 2, 0.0, 128, 1e-3, 100, "kfold10"),
    "PhysioNet-MI": DatasetPreset(109, 64, 250, 4, 4, 0.0, 128, 1e-3, 100, "kfold10"),
    "Mumtaz2017": DatasetPreset(63, 19, 200, 5, 2, 0.0, 128, 1e-4, 30, "kfold10"),
    "ADFTD": DatasetPreset(88, 19, 250, 4, 3, 0.0, 128, 1e-4, 30, "kfold10"),
    "Rockhill2021": DatasetPreset(31, 32, 250, 4, 2, 0.5, 32, 1e-4, 30, "kfold5"),
    "EEGMat": DatasetPreset(36, 19, 500, 2, 2, 0.5, 32, 1e-3, 30, "kfold10"),
    "Shin2018": DatasetPreset(26, 28, 250, 4, 2, 0.0, 32, 1e-3, 100, "kfold10"),
}


def preset_configs(name: str) -> Tuple[ModelConfig, TrainConfig]:
    try:
        p = DATASETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown dataset preset {name!r}; choose from {sorted(DATASETS)}") from None
    return (ModelConfig(n_channels=p.n_channels, n_samples=p.n_samples, n_classes=p.n_classes),
            TrainConfig(batch_size=p.batch_size, learning_rate=p.learning_rate, max_epochs=p.max_epochs))


# ----------------------------------------------------------------------------
# INI config files: sections [arch], [train], [data], [ablation]
# ----------------------------------------------------------------------------
@dataclass(frozen=True)
class DataConfig:
    protocol: str = "kfold"
    k: int = 4
    workers: int = 1

    def __post_init__(self):
        if self.protocol not in ("loso", "kfold"):
            raise ConfigurationError("protocol must be 'loso' or 'kfold'")
        if self.k < 2:
            raise ConfigurationError("k must be >= 2")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")


_ABLATION_KEYS = ("use_fine", "use_coarse", "use_intra", "use_inter", "use_pe", "aggregation", "reinject")
_ARCH_KEYS = tuple(f.name for f in fields(ModelConfig) if f.name not in _ABLATION_KEYS)


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "train": self.train.to_dict(),
                "data": dataclasses.asdict(self.data)}

    def hash(self) -> str:
        return config_hash(self.to_dict())


def _parse_value(raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.replace("(", "").replace(")", "").split(",") if v.strip())
        return raw
    except ValueError:
        raise ConfigurationError(f"cannot parse {raw!r} as {type(default).__name__}") from None


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value)


_SECTIONS = {
    "arch": ("model", _ARCH_KEYS),
    "ablation": ("model", _ABLATION_KEYS),
    "train": ("train", tuple(f.name for f in fields(TrainConfig))),
    "data": ("data", tuple(f.name for f in fields(DataConfig))),
}


def apply_overrides(cfg: RunConfig, overrides: Dict[str, Dict[str, str]]) -> RunConfig:
    """Apply ``{section: {key: raw_string}}``; unknown sections or keys are rejected."""
    parts = {"model": cfg.model.to_dict(), "train": cfg.train.to_dict(),
             "data": dataclasses.asdict(cfg.data)}
    for section, values in overrides.items():
        if section not in _SECTIONS:
            raise ConfigurationError(f"unknown config section [{section}]")
        target, allowed = _SECTIONS[section]
        for key, raw in values.items():
            if key not in allowed:
                raise ConfigurationError(f"unknown key {key!r} in [{section}]")
            parts[target][key] = _parse_value(str(raw), parts[target][key])
    return RunConfig(ModelConfig(**parts["model"]), TrainConfig(**parts["train"]), DataConfig(**parts["data"]))


def load_config(path: Optional[Path] = None, overrides: Optional[Dict[str, Dict[str, str]]] = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        with open(path) as fh:
            parser.read_file(fh)
        cfg = apply_overrides(cfg, {s: dict(parser[s]) for s in parser.sections()})
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def dump_config(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parts = {"model": cfg.model.to_dict(), "train": cfg.train.to_dict(),
             "data": dataclasses.asdict(cfg.data)}
    for section, (target, keys) in _SECTIONS.items():
        parser[section] = {k: _format_value(parts[target][k]) for k in keys}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(dump_config(cfg))
