import math

import numpy as np
import pytest

from dsainet import autodiff as ad
from dsainet.autodiff import Tensor
from dsainet.config import ModelConfig, TrainConfig
from dsainet.data import SplitRun, TrialSet, make_splits, synth_generate, zscore
from dsainet.exceptions import ConfigurationError, ContractError, DataError
from dsainet.metrics import format_summary, summarize
from dsainet.model import DSAINet
from dsainet.params import ParamStore
from dsainet.training import (Adam, RunRecord, _val_accuracy, cross_entropy, fit, predict_logits, read_records,
                              run_protocol, train, write_records)

from conftest import check_grads


# -- loss ------------------------------------------------------------------------
def test_uniform_logits_loss_is_log_k():
    assert cross_entropy(Tensor(np.zeros((3, 4))), [0, 1, 3]).item() == pytest.approx(math.log(4), abs=1e-12)


def test_confident_correct_logits_near_zero():
    assert cross_entropy(Tensor([[20.0, -20.0]]), [0]).item() < 1e-15


def test_extreme_logits_stay_finite():
    loss = cross_entropy(Tensor([[1e4, -1e4]]), [1])
    assert loss.item() == pytest.approx(2e4)


def test_loss_gradient(rng):
    labels = rng.integers(0, 5, 6)
    check_grads(lambda z: cross_entropy(z, labels), [rng.standard_normal((6, 5)) * 3], rng)


def test_loss_matches_log_softmax_composition(rng):
    z = rng.standard_normal((4, 3))
    y = np.array([0, 2, 1, 2])
    ref = -ad.log_softmax(Tensor(z)).data[np.arange(4), y].mean()
    assert cross_entropy(Tensor(z), y).item() == pytest.approx(ref, abs=1e-14)


def test_out_of_range_label_names_trial():
    with pytest.raises(DataError, match="trial 2"):
        cross_entropy(Tensor(np.zeros((3, 2))), [0, 1, 2])
    with pytest.raises(DataError, match="trial 0"):
        cross_entropy(Tensor(np.zeros((1, 2))), [-1])


# -- optimizer -------------------------------------------------------------------
def _scalar_store(w, g):
    s = ParamStore()
    t = s.add("w", np.array(w))
    t.grad = np.array(g, dtype=float)
    return s, t


def test_first_adam_step_is_lr_times_sign():
    s, t = _scalar_store(0.0, 1.0)
    Adam(s, lr=1e-3).step()
    assert t.data == pytest.approx(-1e-3, rel=1e-6)
    assert t.grad is None


def test_zero_grad_zero_weight_unchanged():
    s, t = _scalar_store(0.0, 0.0)
    opt = Adam(s)
    for _ in range(3):
        t.grad = np.array(0.0)
        opt.step()
    assert t.data == 0.0


def test_missing_grad_is_contract_error():
    s = ParamStore()
    s.add("w", np.zeros(2))
    with pytest.raises(ContractError):
        Adam(s).step()


def _closed_form(w, g, lr, wd, decoupled, steps, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t in range(1, steps + 1):
        gt = g if decoupled else g + wd * w
        m = b1 * m + (1 - b1) * gt
        v = b2 * v + (1 - b2) * gt * gt
        if decoupled:
            w = w - lr * wd * w
        w = w - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return w


@pytest.mark.parametrize("decoupled", [False, True])
def test_weight_decay_conventions_match_closed_form(decoupled):
    s, t = _scalar_store(2.0, 0.3)
    opt = Adam(s, lr=0.1, weight_decay=0.5, decoupled=decoupled)
    for _ in range(4):
        t.grad = np.array(0.3)
        opt.step()
    assert t.data == pytest.approx(_closed_form(2.0, 0.3, 0.1, 0.5, decoupled, 4), abs=1e-14)


def test_coupled_and_decoupled_differ_on_nonzero_weight():
    res = []
    for decoupled in (False, True):
        s, t = _scalar_store(2.0, 0.3)
        opt = Adam(s, lr=0.1, weight_decay=0.5, decoupled=decoupled)
        for _ in range(2):
            t.grad = np.array(0.3)
            opt.step()
        res.append(float(t.data))
    assert abs(res[0] - res[1]) > 1e-3


def test_adam_matches_torch_reference(rng):
    torch = pytest.importorskip("torch")
    w0 = rng.standard_normal((3, 4))
    grads = [rng.standard_normal((3, 4)) for _ in range(5)]
    for decoupled, cls in ((False, torch.optim.Adam), (True, torch.optim.AdamW)):
        s = ParamStore()
        t = s.add("w", w0.copy())
        ours = Adam(s, lr=0.01, weight_decay=0.1, decoupled=decoupled)
        tw = torch.tensor(w0.copy(), requires_grad=True)
        ref = cls([tw], lr=0.01, weight_decay=0.1, betas=(0.9, 0.999), eps=1e-8)
        for g in grads:
            t.grad = g.copy()
            ours.step()
            tw.grad = torch.tensor(g)
            ref.step()
        np.testing.assert_allclose(t.data, tw.detach().numpy(), rtol=1e-12, atol=1e-14)


# -- training loop ------------------------------------------------------------------
@pytest.fixture(scope="module")
def tiny():
    data = synth_generate(n_subjects=4, trials_per_subject=16, n_channels=4, n_samples=256, seed=3)
    cfg = ModelConfig(n_channels=4, n_samples=256, n_classes=2, f1=4, embed_dim=8, n_heads=2)
    manifest = make_splits(data.subjects, data.y, "kfold", k=4, seed=0)
    return data, cfg, manifest


def test_same_seed_same_record(tiny):
    data, cfg, manifest = tiny
    tc = TrainConfig(max_epochs=3, batch_size=8)
    a, _ = train(cfg, data, manifest.runs[0], tc, seed=5)
    b, _ = train(cfg, data, manifest.runs[0], tc, seed=5)
    assert a.train_loss == b.train_loss and a.val_acc == b.val_acc
    assert (a.test_acc, a.test_f1, a.best_epoch, a.config_hash) == (b.test_acc, b.test_f1, b.best_epoch, b.config_hash)
    c, _ = train(cfg, data, manifest.runs[0], tc, seed=6)
    assert c.train_loss != a.train_loss


def test_zero_lr_leaves_parameters(tiny):
    data, cfg, manifest = tiny
    _, model = train(cfg, data, manifest.runs[0], TrainConfig(max_epochs=2, batch_size=8, learning_rate=0.0), seed=1)
    fresh = DSAINet(cfg, seed=1)
    for name, t in model.params.items():
        assert t.data.tobytes() == fresh.params[name].data.tobytes(), name


def test_reports_best_validation_checkpoint_not_last(tiny):
    data, cfg, manifest = tiny
    scores = iter([0.5, 0.9, 0.6, 0.9, 0.7])
    snapshots = {}

    def scorer(model, X, y):
        return next(scores)

    def snap(epoch, model):
        snapshots[epoch] = model.params.state_dict()

    rec, model = train(cfg, data, manifest.runs[0], TrainConfig(max_epochs=5, batch_size=8), seed=0,
                       val_scorer=scorer, on_epoch_end=snap)
    assert rec.best_epoch == 1
    final = model.params.state_dict()
    for k in final:
        np.testing.assert_array_equal(final[k], snapshots[1][k])
    assert any(not np.array_equal(final[k], snapshots[4][k]) for k in final)


def test_accuracy_ties_broken_by_validation_loss(tiny):
    data, cfg, manifest = tiny
    keys = iter([(0.5, -0.9), (1.0, -0.4), (1.0, -0.2), (1.0, -0.3)])
    rec, _ = train(cfg, data, manifest.runs[0], TrainConfig(max_epochs=4, batch_size=8), seed=0,
                   val_scorer=lambda m, X, y: next(keys))
    assert rec.best_epoch == 2 and rec.val_acc == [0.5, 1.0, 1.0, 1.0]


def test_default_selection_key(tiny):
    data, cfg, manifest = tiny
    model = DSAINet(cfg, seed=0)
    X = zscore(data.X[:20])
    logits = predict_logits(model, X)
    acc, neg_loss = _val_accuracy(model, X, data.y[:20])
    assert acc == np.mean(logits.argmax(1) == data.y[:20])
    shifted = logits - logits.max(1, keepdims=True)
    nll = np.log(np.exp(shifted).sum(1)) - shifted[np.arange(20), data.y[:20]]
    assert neg_loss == pytest.approx(-nll.mean(), rel=1e-12)


def test_last_partial_batch_is_kept(tiny):
    data, cfg, _ = tiny
    model = DSAINet(cfg)
    calls = []
    orig = model.forward

    def spy(x, *a, **kw):
        calls.append(np.asarray(x).shape[0])
        return orig(x, *a, **kw)

    model.forward = spy
    X = data.X[:13].astype(float)
    fit(model, X, data.y[:13], X[:4], data.y[:4], TrainConfig(max_epochs=1, batch_size=5), seed=0)
    assert calls[:3] == [5, 5, 3]


def test_empty_partition_rejected(tiny):
    data, cfg, manifest = tiny
    r = manifest.runs[0]
    empty = SplitRun(r.train_subjects, [], r.test_subjects, r.train_idx, [], r.test_idx)
    with pytest.raises(ConfigurationError, match="val"):
        train(cfg, data, empty, TrainConfig(max_epochs=1), seed=0)


def test_data_config_mismatch_rejected(tiny):
    data, cfg, manifest = tiny
    with pytest.raises(ConfigurationError, match="expects"):
        train(ModelConfig(n_channels=5, n_samples=256, n_classes=2), data, manifest.runs[0], TrainConfig(max_epochs=1), 0)


def test_records_round_trip_and_summary(tmp_path, tiny):
    recs = [RunRecord(seed=s, train_loss=[1.0, 0.5], val_acc=[0.5, 0.75], test_acc=a, test_f1=f, best_epoch=1,
                      config_hash="abc") for s, a, f in [(0, 0.9, 0.8), (1, 0.7, 0.6), (2, 0.8, 0.7)]]
    path = write_records(recs, tmp_path / "r.jsonl")
    back = read_records(path)
    assert back == recs
    summary = summarize(back)
    accs = [0.9, 0.7, 0.8]
    mean = sum(accs) / 3
    std = math.sqrt(sum((a - mean) ** 2 for a in accs) / 3)
    assert summary["test_acc"] == pytest.approx((mean, std), abs=1e-15)
    assert "0.8000" in format_summary(summary, 3)


def test_parallel_protocol_matches_serial(tiny):
    data, cfg, manifest = tiny
    tc = TrainConfig(max_epochs=1, batch_size=8, seeds=(0,))
    manifest.runs = manifest.runs[:2]
    serial = run_protocol(cfg, data, manifest, tc, workers=1)
    parallel = run_protocol(cfg, data, manifest, tc, workers=2)
    for a, b in zip(serial, parallel):
        assert (a.train_loss, a.test_acc, a.run) == (b.train_loss, b.test_acc, b.run)


@pytest.fixture(scope="module")
def benchmark():
    data = synth_generate()
    return data, make_splits(data.subjects, data.y, "kfold", k=4, seed=0)


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_loss_decreases_over_first_five_epochs(benchmark, seed):
    data, manifest = benchmark
    cfg = ModelConfig(n_channels=8, n_samples=500, n_classes=2)
    rec, _ = train(cfg, data, manifest.runs[0], TrainConfig(max_epochs=5), seed=seed)
    loss = rec.train_loss
    assert loss[-1] < loss[0] and max(loss[1:]) < loss[0], loss
