"""Cross-entropy loss, Adam, and the train / select-best-validation / test loop."""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, make_op
from .config import ModelConfig, TrainConfig, config_hash
from .data import SplitManifest, SplitRun, TrialSet, zscore
from .exceptions import ConfigurationError, ContractError, DataError
from .metrics import accuracy, weighted_f1
from .model import DSAINet
from .params import ParamStore

logger = logging.getLogger(__name__)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``.

    Evaluated as ``logsumexp(z) - z[label]`` with the max subtracted, and
    differentiated in closed form: ``(softmax(z) - onehot) / B``.
    """
    z = logits.data
    if z.ndim != 2:
        raise ContractError(f"cross_entropy expects [batch, K] logits, got {z.shape}")
    B, K = z.shape
    y = np.asarray(labels).reshape(-1)
    if y.shape[0] != B:
        raise DataError(f"{y.shape[0]} labels for a batch of {B}")
    bad = np.flatnonzero((y < 0) | (y >= K))
    if bad.size:
        raise DataError(f"trial {bad[0]} has label {y[bad[0]]} outside [0, {K})")
    y = y.astype(np.int64)
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    loss = np.mean(lse - shifted[np.arange(B), y])

    def rule(g):
        p = np.exp(shifted - lse[:, None])
        p[np.arange(B), y] -= 1.0
        return (g * p / B,)

    return make_op(np.asarray(loss, dtype=z.dtype), (logits,), rule, "cross_entropy")


class Adam:
    """Bias-corrected Adam over every trainable tensor of a :class:`ParamStore`.

    ``weight_decay`` is added to the gradient as an L2 term by default; with
    ``decoupled=True`` it shrinks the weights directly instead.
    """

    def __init__(self, store: ParamStore, lr: float = 1e-3, betas: Tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-4, decoupled: bool = False):
        if lr < 0:
            raise ConfigurationError(f"learning rate must be >= 0, got {lr}")
        self.store = store
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.decoupled = decoupled
        self.t = 0
        self.m: Dict[str, np.ndarray] = {n: np.zeros_like(p.data) for n, p in store.items()}
        self.v: Dict[str, np.ndarray] = {n: np.zeros_like(p.data) for n, p in store.items()}

    def step(self) -> None:
        missing = [n for n, p in self.store.items() if p.grad is None]
        if missing:
            raise ContractError(f"Adam step with no gradient for {missing[0]} (and {len(missing) - 1} more)")
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, p in self.store.items():
            g = p.grad
            if self.weight_decay and not self.decoupled:
                g = g + self.weight_decay * p.data
            m, v = self.m[name], self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if self.weight_decay and self.decoupled:
                p.data -= self.lr * self.weight_decay * p.data
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        self.store.zero_grad()


@dataclass
class RunRecord:
    seed: int
    train_loss: List[float]
    val_acc: List[float]
    test_acc: float
    test_f1: float
    best_epoch: int
    config_hash: str
    run: int = 0
    test_subjects: List[int] = field(default_factory=list)
    seconds: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, line: str) -> "RunRecord":
        return cls(**json.loads(line))


def write_records(records: Sequence[RunRecord], path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")
    return path


def read_records(path) -> List[RunRecord]:
    return [RunRecord.from_json(line) for line in Path(path).read_text().splitlines() if line.strip()]


def _prep(X, dtype) -> np.ndarray:
    return zscore(X).astype(dtype, copy=False)


def predict_logits(model: DSAINet, X: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode logits for already-normalised ``[n, C, T]`` input."""
    out = []
    with ad.no_grad():
        for s in range(0, X.shape[0], batch_size):
            out.append(model.forward(X[s:s + batch_size], train=False).data)
    return np.concatenate(out, axis=0)


def evaluate(model: DSAINet, X: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
    preds = predict_logits(model, X).argmax(axis=1)
    return accuracy(preds, y), weighted_f1(preds, y, model.config.n_classes)


def _val_accuracy(model: DSAINet, X: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
    """Validation accuracy, with lower validation cross-entropy breaking ties."""
    logits = predict_logits(model, X)
    return accuracy(logits.argmax(axis=1), y), -float(cross_entropy(Tensor(logits), y).data)


@dataclass
class FitHistory:
    train_loss: List[float]
    val_acc: List[float]
    best_epoch: int


def fit(model: DSAINet, X_train: np.ndarray, y_train: np.ndarray, X_val: np.ndarray, y_val: np.ndarray,
        train_cfg: TrainConfig, seed: int,
        val_scorer: Callable[[DSAINet, np.ndarray, np.ndarray], Union[float, Tuple[float, ...]]] = _val_accuracy,
        on_epoch_end: Optional[Callable[[int, DSAINet], None]] = None) -> FitHistory:
    """Train for ``max_epochs`` and leave ``model`` holding the best-validation weights.

    Inputs must already be normalised and cast. ``val_scorer`` returns a float
    or a tuple compared lexicographically; its first entry is logged as the
    validation accuracy. The default ranks by accuracy, then by lower
    cross-entropy. The first epoch reaching the highest score wins; later
    exact ties do not replace it.
    """
    rng = np.random.default_rng((seed, 1))
    opt = Adam(model.params, lr=train_cfg.learning_rate, weight_decay=train_cfg.weight_decay,
               decoupled=train_cfg.decoupled_weight_decay)
    n = X_train.shape[0]
    bs = train_cfg.batch_size
    losses, val_accs = [], []
    best, best_epoch, best_state = None, -1, None
    for epoch in range(train_cfg.max_epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, bs):
            idx = order[s:s + bs]
            model.params.zero_grad()
            loss = cross_entropy(model.forward(X_train[idx], train=True, rng=rng), y_train[idx])
            ad.backward(loss)
            opt.step()
            total += float(loss.data) * idx.size
        losses.append(total / n)
        score = val_scorer(model, X_val, y_val)
        score = tuple(float(v) for v in score) if isinstance(score, tuple) else (float(score),)
        val_accs.append(score[0])
        if best is None or score > best:
            best, best_epoch, best_state = score, epoch, model.params.state_dict()
        if on_epoch_end is not None:
            on_epoch_end(epoch, model)
        logger.debug("epoch %d loss %.5f val %.4f", epoch, losses[-1], score[0])
    model.params.load_state_dict(best_state)
    return FitHistory(losses, val_accs, best_epoch)


def _check_compatible(cfg: ModelConfig, data: TrialSet) -> None:
    found = (data.n_channels, data.n_samples, data.n_classes)
    wanted = (cfg.n_channels, cfg.n_samples, cfg.n_classes)
    if found != wanted:
        raise ConfigurationError(
            f"data has (C, T, K) = {found} but the model config expects {wanted}")


def train(model_cfg: ModelConfig, data: TrialSet, split: SplitRun, train_cfg: TrainConfig, seed: int,
          run: int = 0, val_scorer: Callable = _val_accuracy,
          on_epoch_end: Optional[Callable] = None) -> Tuple[RunRecord, DSAINet]:
    """One run of a split manifest: fit, pick best validation epoch, test once."""
    _check_compatible(model_cfg, data)
    for part in ("train_idx", "val_idx", "test_idx"):
        if len(getattr(split, part)) == 0:
            raise ConfigurationError(f"run {run}: {part.split('_')[0]} partition is empty")
    dtype = np.dtype(train_cfg.dtype)
    start = time.perf_counter()
    parts = {}
    for part in ("train", "val", "test"):
        idx = np.asarray(getattr(split, f"{part}_idx"), dtype=np.int64)
        parts[part] = (_prep(data.X[idx], dtype), data.y[idx])
    model = DSAINet(model_cfg, seed=seed, dtype=dtype)
    hist = fit(model, *parts["train"], *parts["val"], train_cfg, seed, val_scorer, on_epoch_end)
    acc, f1 = evaluate(model, *parts["test"])
    record = RunRecord(seed=seed, train_loss=hist.train_loss, val_acc=hist.val_acc, test_acc=acc, test_f1=f1,
                       best_epoch=hist.best_epoch, config_hash=config_hash(model_cfg.to_dict(), train_cfg.to_dict()),
                       run=run, test_subjects=list(split.test_subjects),
                       seconds=time.perf_counter() - start)
    logger.info("run %d seed %d: test acc %.4f f1 %.4f (best epoch %d, %.1fs)",
                run, seed, acc, f1, hist.best_epoch, record.seconds)
    return record, model


def _job(args):
    model_cfg, data, split, train_cfg, seed, run, ckpt = args
    record, model = train(model_cfg, data, split, train_cfg, seed, run)
    if ckpt is not None:
        model.save(ckpt)
    return record


def run_protocol(model_cfg: ModelConfig, data: TrialSet, manifest: SplitManifest, train_cfg: TrainConfig,
                 seeds: Optional[Sequence[int]] = None, workers: int = 1,
                 checkpoint_dir: Optional[Path] = None) -> List[RunRecord]:
    """Every manifest run under every seed; ``workers > 1`` fans out to processes."""
    seeds = list(train_cfg.seeds if seeds is None else seeds)
    jobs = []
    for seed in seeds:
        for i, split in enumerate(manifest.runs):
            ckpt = None if checkpoint_dir is None else Path(checkpoint_dir) / f"run{i}_seed{seed}.npz"
            jobs.append((model_cfg, data, split, train_cfg, seed, i, ckpt))
    if workers <= 1:
        return [_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_job, jobs))
