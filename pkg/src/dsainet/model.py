"""The assembled network: tokenizer -> temporal branches -> attention -> aggregation -> logits."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .attention import INTRA, init_attention, inter_interact, intra_refine
from .autodiff import Tensor
from .branches import init_branches, run_branches
from .config import ModelConfig
from .exceptions import DataError
from .head import aggregate, classify, init_head
from .params import ParamStore
from .tokenizer import init_tokenizer, project_and_encode, tokenize


@dataclass
class ForwardTrace:
    """Intermediate products of one forward pass, for inspection and tests."""

    tokens: Optional[Tensor] = None
    branch_tokens: Dict[str, Tensor] = field(default_factory=dict)
    final_tokens: Dict[str, Tensor] = field(default_factory=dict)
    pooled: Dict[str, Tensor] = field(default_factory=dict)
    weights: Dict[str, np.ndarray] = field(default_factory=dict)
    attention: Dict[str, List[np.ndarray]] = field(default_factory=dict)


class DSAINet:
    """Dual-scale attentive interaction network over ``[B, C, T]`` EEG batches.

    Parameters are created in a :class:`ParamStore` seeded by ``seed``; the
    forward pass is a pure function of the inputs, the store and (in training
    mode) the dropout generator.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float64):
        self.config = config
        self.params = ParamStore(dtype)
        rng = np.random.default_rng(seed)
        init_tokenizer(self.params, config, rng)
        init_branches(self.params, config, rng)
        init_attention(self.params, config, rng)
        init_head(self.params, config, rng)

    @property
    def dtype(self):
        return self.params.dtype

    def n_parameters(self) -> int:
        return self.params.n_trainable()

    def forward(self, x, train: bool = False, rng: Optional[np.random.Generator] = None,
                trace: Optional[ForwardTrace] = None) -> Tensor:
        """Logits ``[B, K]``. Pass a :class:`ForwardTrace` to collect intermediates."""
        cfg, store = self.config, self.params
        if train and rng is None and cfg.dropout > 0:
            rng = np.random.default_rng()
        z0 = project_and_encode(tokenize(x, store, cfg, train, rng), store, cfg)
        streams = run_branches(z0, store, cfg, train)
        maps: Dict[str, List[np.ndarray]] = {}
        if trace is not None:
            trace.tokens = z0
            trace.branch_tokens = dict(streams)
        if cfg.use_intra:
            for b in cfg.branches:
                streams[b], maps[INTRA[b]] = intra_refine(streams[b], store, cfg, b, train, rng)
        if cfg.interacting:
            streams["fine"], streams["coarse"], cross = inter_interact(
                streams["fine"], streams["coarse"], store, cfg, train, rng)
            maps.update(cross)
        query = store["head.query"] if cfg.aggregation == "adaptive" else None
        pooled = {}
        for b in cfg.branches:
            pooled[b], w = aggregate(streams[b], query)
            if trace is not None:
                trace.weights[b] = w.data
        logits = classify([pooled[b] for b in cfg.branches], store, cfg)
        if trace is not None:
            trace.final_tokens = dict(streams)
            trace.pooled = pooled
            trace.attention = maps
        return logits

    __call__ = forward

    # -- persistence -----------------------------------------------------
    def save(self, path) -> None:
        state = self.params.state_dict()
        meta = {"config": self.config.to_dict(), "dtype": str(self.dtype)}
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.array(json.dumps(meta)), **state)

    @classmethod
    def load(cls, path) -> "DSAINet":
        with np.load(path, allow_pickle=False) as f:
            if "__meta__" not in f.files:
                raise DataError(f"{path} is not a model checkpoint")
            meta = json.loads(str(f["__meta__"]))
            state = {k: f[k] for k in f.files if k != "__meta__"}
        model = cls(ModelConfig(**meta["config"]), dtype=np.dtype(meta["dtype"]))
        model.params.load_state_dict(state)
        return model


def save_checkpoint(model: DSAINet, path) -> Path:
    path = Path(path)
    model.save(path)
    return path


def load_checkpoint(path) -> DSAINet:
    return DSAINet.load(path)
