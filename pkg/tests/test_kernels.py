import numpy as np
import pytest

from synfire_bp import kernels, oracle

BACKENDS = kernels.backends()


def test_python_backend_always_available():
    assert "python" in BACKENDS
    assert kernels.BACKEND in BACKENDS


@pytest.mark.skipif("cython" not in BACKENDS, reason="compiled backend not built")
@pytest.mark.parametrize("seed", range(3))
def test_backends_agree(seed):
    rng = np.random.default_rng(seed)
    dims = (60, 40, 10)
    net = oracle.init(oracle.InitConfig(seed=seed), dims)
    x = (rng.random((300, dims[0])) < 0.3).astype(np.uint8)
    y = rng.integers(0, 10, 300).astype(np.int64)
    order = rng.permutation(300).astype(np.int64)
    out = {}
    for name, mod in BACKENDS.items():
        w1, w2 = net.w1.copy(), net.w2.copy()
        st = mod.run_oracle(w1, w2, x, y, order, 1024, -256, 254, -254, 254, 2, True)
        acc = np.zeros(dims[1], dtype=np.int32)
        mod.accumulate_columns(w1, np.flatnonzero(x[0]).astype(np.int64), acc)
        w = w1.copy()
        mod.hebbian_update(w, np.arange(0, 60, 3, dtype=np.int64), np.arange(0, 40, 2, dtype=np.int64), 2, -256, 254)
        out[name] = (st, w1, w2, acc, w)
    for a, b in zip(out["python"], out["cython"]):
        np.testing.assert_array_equal(a, b)


def test_learn_off_leaves_weights():
    net = oracle.init(oracle.InitConfig(seed=0), (20, 10, 10))
    before = net.copy()
    rng = np.random.default_rng(0)
    oracle.run(net, (rng.random((50, 20)) < 0.3).astype(np.uint8), rng.integers(0, 10, 50), learn=False)
    np.testing.assert_array_equal(net.w1, before.w1)
    np.testing.assert_array_equal(net.w2, before.w2)


def test_stats_match_closed_form():
    rng = np.random.default_rng(3)
    net = oracle.init(oracle.InitConfig(seed=3), (25, 15, 10))
    x = (rng.random((40, 25)) < 0.4).astype(np.uint8)
    y = rng.integers(0, 10, 40)
    ref = net.copy()
    st = oracle.run(net, x, y)
    for i in range(40):
        fwd = oracle.forward(x[i], ref)
        b = oracle.gradients(x[i], oracle.one_hot(int(y[i]), 10), ref, fwd)
        row = st[i]
        assert row[kernels.PRED] == (oracle.predict(fwd) if fwd.o.any() else -1)
        assert row[kernels.N_H] == fwd.h.sum() and row[kernels.N_BH] == fwd.b_h.sum()
        assert row[kernels.N_D2P] == b.d2_plus.sum() and row[kernels.N_D2M] == b.d2_minus.sum()
        assert row[kernels.N_D1P] == b.d1_plus.sum() and row[kernels.N_D1M_RAW] == b.d1_minus_raw.sum()
        assert row[kernels.N_ERR] == (fwd.o != oracle.one_hot(int(y[i]), 10)).sum()
        ref = oracle.update(ref, x[i], fwd.h, b)


def test_env_var_forces_python_backend():
    import os
    import subprocess
    import sys

    env = dict(os.environ, SYNFIRE_BP_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from synfire_bp import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
