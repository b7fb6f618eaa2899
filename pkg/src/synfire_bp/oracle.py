"""Closed-form binarized backpropagation with the circuit's integer quantization.

Everything is in integer weight units (ANN value times ``v_thr``). All
threshold tests are strict:

* activation ``f``: input > v_thr / 2
* start condition: input > 0
* stop condition: input > v_thr
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from synfire_bp import kernels
from synfire_bp.plasticity import PlasticRule

V_THR = 1024
INIT_TRUNC = 240


@dataclass
class OracleNet:
    w1: np.ndarray  # (n_hid, n_in)
    w2: np.ndarray  # (n_out, n_hid)
    v_thr: int = V_THR
    rule: PlasticRule = PlasticRule()

    def __post_init__(self):
        self.w1 = np.ascontiguousarray(self.w1, dtype=np.int16)
        self.w2 = np.ascontiguousarray(self.w2, dtype=np.int16)
        if self.w2.shape[1] != self.w1.shape[0]:
            raise ValueError(f"W1 {self.w1.shape} and W2 {self.w2.shape} do not chain")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.w1.shape[1], self.w1.shape[0], self.w2.shape[0]

    @property
    def rule_w2(self) -> PlasticRule:
        # W2 has a negated copy in the circuit
        return self.rule.sign_closed()

    def copy(self) -> OracleNet:
        return replace(self, w1=self.w1.copy(), w2=self.w2.copy())


@dataclass
class Forward:
    a1: np.ndarray
    a2: np.ndarray
    h: np.ndarray
    o: np.ndarray
    h_start: np.ndarray
    h_stop: np.ndarray
    o_start: np.ndarray
    o_stop: np.ndarray

    @property
    def b_h(self) -> np.ndarray:
        return self.h_start & ~self.h_stop

    @property
    def b_o(self) -> np.ndarray:
        return self.o_start & ~self.o_stop


@dataclass
class GradientBundle:
    d2_plus: np.ndarray
    d2_minus: np.ndarray
    d1_plus_raw: np.ndarray
    d1_minus_raw: np.ndarray
    b_h: np.ndarray

    @property
    def d1_plus(self) -> np.ndarray:
        return self.d1_plus_raw & self.b_h

    @property
    def d1_minus(self) -> np.ndarray:
        return self.d1_minus_raw & self.b_h

    def is_zero(self) -> bool:
        return not (self.d2_plus.any() or self.d2_minus.any())


def _binary(x, n: int) -> np.ndarray:
    x = np.asarray(x)
    if x.shape != (n,):
        raise ValueError(f"expected a binary vector of length {n}, got shape {x.shape}")
    return x.astype(bool)


def one_hot(label: int, n: int) -> np.ndarray:
    t = np.zeros(n, dtype=bool)
    t[label] = True
    return t


def forward(x, net: OracleNet) -> Forward:
    n_in, _, _ = net.dims
    x = _binary(x, n_in)
    a1 = net.w1[:, x].sum(axis=1, dtype=np.int64)
    h = a1 > net.v_thr // 2
    a2 = net.w2[:, h].sum(axis=1, dtype=np.int64)
    return Forward(
        a1=a1,
        a2=a2,
        h=h,
        o=a2 > net.v_thr // 2,
        h_start=a1 > 0,
        h_stop=a1 > net.v_thr,
        o_start=a2 > 0,
        o_stop=a2 > net.v_thr,
    )


def gradients(x, t, net: OracleNet, fwd: Forward | None = None) -> GradientBundle:
    """Sign-split local gradients of both layers.

    ``t`` is a one-hot (or any binary) target vector.
    """
    _, n_hid, n_out = net.dims
    fwd = fwd or forward(x, net)
    t = _binary(t, n_out)
    box = fwd.b_o
    d2p = t & ~fwd.o & box
    d2m = fwd.o & ~t & box
    err = d2p.astype(np.int64) - d2m.astype(np.int64)
    back = err @ net.w2.astype(np.int64) if err.any() else np.zeros(n_hid, dtype=np.int64)
    return GradientBundle(d2p, d2m, back > 0, back < 0, fwd.b_h)


def _step(w: np.ndarray, rows, cols, delta: int, rule: PlasticRule):
    kernels.hebbian_update(
        w, np.flatnonzero(cols).astype(np.int64), np.flatnonzero(rows).astype(np.int64),
        delta, rule.clip_lo, rule.clip_hi,
    )


def update(net: OracleNet, x, h, bundle: GradientBundle) -> OracleNet:
    """Return a new net with one sign-descent step applied (saturating)."""
    new = net.copy()
    step = net.rule.potentiation_delta
    x = np.asarray(x, dtype=bool)
    h = np.asarray(h, dtype=bool)
    _step(new.w2, bundle.d2_plus, h, step, net.rule_w2)
    _step(new.w2, bundle.d2_minus, h, -step, net.rule_w2)
    _step(new.w1, bundle.d1_plus, x, step, net.rule)
    _step(new.w1, bundle.d1_minus, x, -step, net.rule)
    return new


def train_step(net: OracleNet, x, label: int):
    """Forward, gradients and update for one sample. Returns (new net, fwd, bundle)."""
    fwd = forward(x, net)
    bundle = gradients(x, one_hot(label, net.dims[2]), net, fwd)
    return update(net, x, fwd.h, bundle), fwd, bundle


def loss(o, t) -> float:
    o = np.asarray(o, dtype=float)
    t = np.asarray(t, dtype=float)
    return 0.5 * float(((o - t) ** 2).sum())


def predict(fwd: Forward) -> int | None:
    fired = np.flatnonzero(fwd.o)
    return int(fired[0]) if len(fired) else None


# -- initialisation ----------------------------------------------------------

@dataclass(frozen=True)
class InitConfig:
    scheme: str = "gaussian-fan"
    seed: int = 0
    trunc: int = INIT_TRUNC
    granularity: int = 2

    def __post_init__(self):
        if self.scheme not in ("gaussian-fan", "glorot-uniform"):
            raise ValueError(f"unknown init scheme {self.scheme!r}")


def quantize(w_ann, v_thr: int = V_THR, trunc: int = INIT_TRUNC, granularity: int = 2) -> np.ndarray:
    """Map ANN weights to even integers: scale, truncate, round toward zero."""
    w = np.clip(np.asarray(w_ann, dtype=np.float64) * v_thr, -trunc, trunc)
    return (np.trunc(w / granularity) * granularity).astype(np.int16)


def init(config: InitConfig, dims, v_thr: int = V_THR) -> OracleNet:
    n_in, n_hid, n_out = dims
    rng = np.random.default_rng(config.seed)
    mats = []
    for fan_in, fan_out in ((n_in, n_hid), (n_hid, n_out)):
        if config.scheme == "gaussian-fan":
            w = rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=(fan_out, fan_in))
        else:
            gamma = np.sqrt(1.5 / (fan_in + fan_out))
            w = rng.uniform(-gamma, gamma, size=(fan_out, fan_in))
        mats.append(quantize(w, v_thr, config.trunc, config.granularity))
    return OracleNet(mats[0], mats[1], v_thr)


# -- surrogate used for the backward pass -------------------------------------

def heaviside(x):
    return (np.asarray(x) >= 0).astype(float)


def f_binary(x):
    return heaviside(np.asarray(x) - 0.5)


def f_surrogate(x):
    return np.minimum(np.maximum(x, 0.0), 1.0)


def f_surrogate_prime(x):
    return heaviside(x) - heaviside(np.asarray(x) - 1.0)


# -- fast batch paths -----------------------------------------------------------

def run(net: OracleNet, images: np.ndarray, labels: np.ndarray, order=None, learn: bool = True) -> np.ndarray:
    """Train (or just evaluate) over ``images[order]`` in place using the kernel backend.

    Returns per-sample statistics; see ``kernels`` for the column layout.
    """
    images = np.ascontiguousarray(images, dtype=np.uint8)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    order = np.arange(len(labels), dtype=np.int64) if order is None else np.ascontiguousarray(order, dtype=np.int64)
    r1, r2 = net.rule, net.rule_w2
    return kernels.run_oracle(
        net.w1, net.w2, images, labels, order, net.v_thr,
        r1.clip_lo, r1.clip_hi, r2.clip_lo, r2.clip_hi, r1.potentiation_delta, learn,
    )
