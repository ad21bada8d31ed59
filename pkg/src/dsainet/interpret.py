"""Input-gradient saliency and attention-map extraction from a trained model."""
from __future__ import annotations

from pathlib import Path
from typing import Dict, List

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import write_matrix, zscore
from .exceptions import ConfigurationError, DataError
from .model import DSAINet, ForwardTrace


def _check_input(model: DSAINet, X: np.ndarray) -> None:
    cfg = model.config
    if X.ndim != 3 or X.shape[1:] != (cfg.n_channels, cfg.n_samples):
        raise ConfigurationError(
            f"trials of shape {X.shape[1:]} do not match the checkpoint's (C, T) = "
            f"({cfg.n_channels}, {cfg.n_samples})")


def saliency(model: DSAINet, X, y, batch_size: int = 64, normalize: bool = True) -> np.ndarray:
    """Per-channel mean of ``|d logit_true / d x|`` over time and trials.

    ``X`` holds raw trials ``[n, C, T]``; they are z-scored first unless
    ``normalize`` is false. Returns a length-C vector.
    """
    X = np.asarray(X)
    y = np.asarray(y, dtype=np.int64)
    _check_input(model, X)
    if y.shape != (X.shape[0],):
        raise DataError("one label per trial is required")
    if normalize:
        X = zscore(X)
    X = X.astype(model.dtype, copy=False)
    total = np.zeros(X.shape[1])
    for s in range(0, X.shape[0], batch_size):
        xb = Tensor(X[s:s + batch_size], requires_grad=True)
        logits = model.forward(xb, train=False)
        picked = ad.getitem(logits, (np.arange(xb.shape[0]), y[s:s + batch_size]))
        ad.backward(ad.tsum(picked))
        total += np.abs(xb.grad).mean(axis=2).sum(axis=0)
    model.params.zero_grad()
    return total / X.shape[0]


def attention_maps(model: DSAINet, trial, normalize: bool = True) -> Dict[str, List[np.ndarray]]:
    """``{family: [per-layer [heads, N, N]]}`` for a single trial ``[C, T]``."""
    x = np.asarray(trial)
    if x.ndim == 2:
        x = x[None]
    _check_input(model, x)
    if x.shape[0] != 1:
        raise DataError("attention export takes one trial")
    if normalize:
        x = zscore(x)
    trace = ForwardTrace()
    with ad.no_grad():
        model.forward(x.astype(model.dtype), train=False, trace=trace)
    return {fam: [m[0] for m in maps] for fam, maps in trace.attention.items()}


def export_attention(model: DSAINet, trial, out_dir, normalize: bool = True) -> List[Path]:
    """Write one matrix file per family, layer and head: ``{family}_l{m}_h{h}.bin``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for fam, layers in attention_maps(model, trial, normalize).items():
        for m, heads in enumerate(layers):
            for h, mat in enumerate(heads):
                written.append(write_matrix(out_dir / f"{fam}_l{m}_h{h}.bin", mat))
    return written
