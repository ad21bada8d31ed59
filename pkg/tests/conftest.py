import numpy as np
import pytest

from dsainet import autodiff as ad
from dsainet.autodiff import Tensor
from dsainet.config import ModelConfig


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numeric_grad(loss_fn, arr, coords, h=1e-5):
    """Central differences of ``loss_fn()`` w.r.t. ``arr`` (modified in place) at flat ``coords``."""
    flat = arr.reshape(-1)
    out = []
    for i in coords:
        old = flat[i]
        flat[i] = old + h
        up = loss_fn()
        flat[i] = old - h
        down = loss_fn()
        flat[i] = old
        out.append((up - down) / (2 * h))
    return np.array(out)


def check_grads(build, inputs, rng, n_coords=None, h=1e-5, tol=1e-6):
    """Compare analytic grads of ``sum(w * build(*inputs))`` with finite differences.

    A fixed random weighting ``w`` makes every output element matter.
    Returns the worst relative error over all checked coordinates.
    """
    tensors = [Tensor(x, requires_grad=True) for x in inputs]
    out = build(*tensors)
    w = rng.standard_normal(out.shape)
    ad.backward(ad.tsum(out * Tensor(w)))

    def loss():
        with ad.no_grad():
            return float(np.sum(build(*[Tensor(t.data) for t in tensors]).data * w))

    worst = 0.0
    for t in tensors:
        coords = range(t.size) if n_coords is None or t.size <= n_coords else \
            rng.choice(t.size, n_coords, replace=False)
        coords = list(coords)
        num = numeric_grad(loss, t.data, coords, h)
        ana = t.grad.reshape(-1)[coords]
        worst = max(worst, float(np.max(rel_err(ana, num))))
    assert worst < tol, worst
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def small_cfg():
    """A narrow model that keeps every stage but runs in milliseconds."""
    return ModelConfig(n_channels=4, n_samples=256, n_classes=3, f1=4, embed_dim=8, n_heads=2,
                       temporal_kernels=(9, 5))


# -- acceptance report -------------------------------------------------------------
_ACCEPTANCE: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n, title): test belongs to numbered acceptance criterion n")


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    rep = yield
    mark = item.get_closest_marker("acceptance")
    if mark is not None and (rep.when == "call" or rep.outcome != "passed"):
        n, title = mark.args
        entry = _ACCEPTANCE.setdefault(n, {"title": title, "ok": True, "notes": []})
        entry["ok"] &= rep.outcome == "passed"
        if rep.when == "call":
            entry["notes"] += [v for k, v in item.user_properties if k == "detail"]
    return rep


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        e = _ACCEPTANCE[n]
        notes = "; ".join(e["notes"])
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if e['ok'] else 'FAIL'}  {e['title']}"
                                    + (f"  [{notes}]" if notes else ""))
