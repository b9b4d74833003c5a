"""The compiled and pure-Python kernel backends must agree exactly."""
import numpy as np
import pytest
from hypothesis import given, strategies as st

from laenet import kernels
from laenet.scenario import ChannelConfig

BACKENDS = kernels.backends()
needs_cython = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled extension not built")


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")


def _both(name, *args):
    return getattr(BACKENDS["python"], name)(*args), getattr(BACKENDS["cython"], name)(*args)


@needs_cython
@given(st.lists(st.tuples(st.floats(-500, 500), st.floats(-500, 500), st.floats(0, 20)), min_size=1, max_size=8),
       st.tuples(st.floats(-600, 600), st.floats(-600, 600), st.floats(50, 300)))
def test_link_state_identical(users, pose):
    ch = ChannelConfig(gamma_nlos=3.0)
    n = len(users)
    args = (pose, np.array(users), ch.a_los, ch.b_los, ch.gamma_los, ch.gamma_nlos, ch.beta0_lin,
            np.linspace(0.5, 1.5, n), np.full(n, 0.1), np.full(n, 1e6), ch.noise_w)
    (g1, r1), (g2, r2) = _both("link_state", *args)
    np.testing.assert_allclose(g1, g2, rtol=1e-14, atol=0)
    np.testing.assert_allclose(r1, r2, rtol=1e-14, atol=0)


@needs_cython
@given(st.floats(0, 1e8), st.lists(st.floats(0, 1e7), min_size=1, max_size=30))
def test_upload_identical(d, rates):
    a, b = _both("upload", d, np.array(rates), 1.0)
    assert a == b


@needs_cython
@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10), st.booleans()), min_size=1, max_size=50),
       st.floats(0, 1), st.floats(0, 1))
def test_gae_identical(rows, gamma, lam):
    r, v, d = (np.array(x, float) for x in zip(*rows))
    (a1, t1), (a2, t2) = _both("gae", r, v, d, gamma, lam, 0.3)
    assert np.array_equal(a1, a2) and np.array_equal(t1, t2)


@needs_cython
@given(st.integers(1, 6), st.integers(0, 2**31 - 1), st.sampled_from([10.0, 100.0, 1000.0]))
def test_bisection_identical(n, seed, zeta):
    rng = np.random.default_rng(seed)
    args = (zeta, rng.uniform(3e6, 5e7, n), np.full(n, 1e6), rng.uniform(1e-11, 1e-9, n),
            rng.uniform(1, 2, n), 1e-13, 1e-9, 1e-9)
    a, b = _both("tau_bisect", *args)
    assert a == b
    assert _both("kkt_residual", a[0], *args[:6])[0] == pytest.approx(_both("kkt_residual", a[0], *args[:6])[1],
                                                                       rel=1e-12)


def test_pure_python_env_switch(monkeypatch):
    import importlib
    monkeypatch.setenv("LAENET_PURE_PYTHON", "1")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == "python"
    finally:
        monkeypatch.delenv("LAENET_PURE_PYTHON")
        importlib.reload(kernels)
