"""Run configuration, checkpoints, metrics and the train/eval/lockstep/trace drivers."""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from synfire_bp import circuit, dataio, kernels, oracle

MODES = ("snn", "oracle", "lockstep")
D1_WINDOW = 1000


# -- configuration ------------------------------------------------------------

@dataclass
class RunConfig:
    dims: tuple[int, int, int] = (100, 300, 10)
    epochs: int = 1
    seed: int = 0
    init: str = "gaussian-fan"
    mode: str = "oracle"
    learning: bool = True
    data_dir: str | None = None
    output_dir: str = "run"
    trace_verbosity: int = 0
    train_limit: int | None = None
    test_limit: int | None = None
    inference_only: bool = False
    checkpoint: str | None = None

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) != 3:
            raise ValueError(f"dims must have three entries, got {self.dims}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        oracle.InitConfig(self.init)  # validates the scheme name
        dataio.geometry_for(self.dims[0])
        if self.dims[2] != 10:
            raise ValueError(f"MNIST needs 10 outputs, got {self.dims[2]}")

    @property
    def geometry(self) -> str:
        return dataio.geometry_for(self.dims[0])


def _parse_value(name: str, text: str):
    text = text.strip()
    if name == "dims":
        return tuple(int(p) for p in text.replace("x", ",").split(",") if p.strip())
    if name in ("epochs", "seed", "trace_verbosity"):
        return int(text)
    if name in ("train_limit", "test_limit"):
        return None if text.lower() in ("", "none") else int(text)
    if name in ("learning", "inference_only"):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {text!r}")
    return None if text.lower() == "none" else text


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines. ``#`` starts a comment; keys use RunConfig field names
    (dashes allowed)."""
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _parse_value(key, value)
    return out


# -- checkpoints --------------------------------------------------------------
#
# binary layout, little-endian:
#   8s   magic "SGBPCKPT"
#   u16  format version
#   u16  n_in, u16 n_hid, u16 n_out
#   u32  init seed
#   u32  epoch counter
#   u8   init scheme (0 gaussian-fan, 1 glorot-uniform)
#   n_hid*n_in   x i16   W1, row-major (row = hidden neuron)
#   n_out*n_hid  x i16   W2, row-major (row = output neuron)

CKPT_MAGIC = b"SGBPCKPT"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<8sHHHHIIB")
_SCHEMES = ("gaussian-fan", "glorot-uniform")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    w1: np.ndarray
    w2: np.ndarray
    seed: int = 0
    epoch: int = 0
    init: str = "gaussian-fan"
    version: int = CKPT_VERSION

    def __post_init__(self):
        self.w1 = np.ascontiguousarray(self.w1, dtype=np.int16)
        self.w2 = np.ascontiguousarray(self.w2, dtype=np.int16)
        if self.w2.shape[1] != self.w1.shape[0]:
            raise CheckpointError(f"W1 {self.w1.shape} and W2 {self.w2.shape} do not chain")
        for name, w in (("W1", self.w1), ("W2", self.w2)):
            if np.any(w % 2):
                raise CheckpointError(f"{name} contains odd weights")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.w1.shape[1], self.w1.shape[0], self.w2.shape[0]

    def net(self) -> oracle.OracleNet:
        return oracle.OracleNet(self.w1.copy(), self.w2.copy())

    def to_bytes(self) -> bytes:
        n_in, n_hid, n_out = self.dims
        head = _CKPT_HEADER.pack(CKPT_MAGIC, self.version, n_in, n_hid, n_out,
                                 self.seed, self.epoch, _SCHEMES.index(self.init))
        return head + self.w1.astype("<i2").tobytes() + self.w2.astype("<i2").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> Checkpoint:
        if len(data) < _CKPT_HEADER.size:
            raise CheckpointError("truncated checkpoint header")
        magic, version, n_in, n_hid, n_out, seed, epoch, scheme = _CKPT_HEADER.unpack_from(data)
        if magic != CKPT_MAGIC:
            raise CheckpointError(f"not a checkpoint (magic {magic!r})")
        if version != CKPT_VERSION:
            raise CheckpointError(f"checkpoint version {version}, expected {CKPT_VERSION}")
        off = _CKPT_HEADER.size
        n1, n2 = n_hid * n_in, n_out * n_hid
        if len(data) != off + 2 * (n1 + n2):
            raise CheckpointError(f"checkpoint size {len(data)} does not match dims {n_in}-{n_hid}-{n_out}")
        w1 = np.frombuffer(data, "<i2", n1, off).reshape(n_hid, n_in).copy()
        w2 = np.frombuffer(data, "<i2", n2, off + 2 * n1).reshape(n_out, n_hid).copy()
        return cls(w1, w2, seed, epoch, _SCHEMES[scheme], version)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> Checkpoint:
        return cls.from_bytes(Path(path).read_bytes())

    def to_text(self) -> str:
        """Line-oriented export for diffing: one weight row per line."""
        n_in, n_hid, n_out = self.dims
        lines = [f"# checkpoint v{self.version} dims {n_in} {n_hid} {n_out} "
                 f"seed {self.seed} epoch {self.epoch} init {self.init}"]
        for name, w in (("W1", self.w1), ("W2", self.w2)):
            lines.append(f"[{name}] {w.shape[0]}x{w.shape[1]}")
            lines += [" ".join(str(int(v)) for v in row) for row in w]
        return "\n".join(lines) + "\n"


def initial_checkpoint(config: RunConfig) -> Checkpoint:
    if config.checkpoint:
        ck = Checkpoint.load(config.checkpoint)
        if ck.dims != config.dims:
            raise CheckpointError(f"checkpoint dims {ck.dims} differ from config dims {config.dims}")
        return ck
    net = oracle.init(oracle.InitConfig(config.init, config.seed), config.dims)
    return Checkpoint(net.w1, net.w2, config.seed, 0, config.init)


# -- metrics --------------------------------------------------------------------

@dataclass
class EvalResult:
    accuracy: float
    mse: float
    confusion: np.ndarray  # (n_out, n_out + 1); last column counts silent outputs
    spikes_per_neuron: dict[str, float]
    spikes: int

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")


@dataclass
class RunMetrics:
    accuracy: list[float] = field(default_factory=list)
    mse: list[float] = field(default_factory=list)
    spikes_per_neuron: dict[str, float] = field(default_factory=dict)
    # (epoch, first sample, d1 spikes / hidden neuron / sample) per training window
    d1_windows: list[tuple[int, int, float]] = field(default_factory=list)
    total_spikes: int = 0
    divergence: dict | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1) + "\n"


def frame_spike_counts(stats: np.ndarray, period: int = circuit.PERIOD) -> np.ndarray:
    """Spikes the full circuit emits per training frame, from closed-form statistics.

    Per frame: the gating chain fires once per step; x fires at 1, 7, 11 and
    m_x once; h fires at 2, 5, 9 and m_h, hT each replay it once; every d2
    spike is followed by the o, o<, o> copies and oT-; every gated d1 spike
    fires in h, h< and h>.
    """
    k = kernels
    d2 = stats[:, k.N_D2P] + stats[:, k.N_D2M]
    return (
        period
        + 4 * stats[:, k.N_X]
        + 6 * stats[:, k.N_H]
        + stats[:, k.N_HSTART] + stats[:, k.N_HSTOP] + stats[:, k.N_BH]
        + stats[:, k.N_O] + stats[:, k.N_OSTART] + stats[:, k.N_OSTOP]
        + 1  # target
        + 5 * d2
        + stats[:, k.N_D1P_RAW] + stats[:, k.N_D1M_RAW]
        + 3 * (stats[:, k.N_D1P] + stats[:, k.N_D1M])
    )


def _confusion(pred: np.ndarray, labels: np.ndarray, n_out: int) -> np.ndarray:
    conf = np.zeros((n_out, n_out + 1), dtype=np.int64)
    np.add.at(conf, (labels, np.where(pred < 0, n_out, pred)), 1)
    return conf


def evaluate(ck: Checkpoint, ds: dataio.Dataset, mode: str = "oracle") -> EvalResult:
    """Test accuracy, mean E = 0.5 |o - t|^2, confusion counts and inference sparsity.

    ``mode="snn"`` runs each sample through the 4-step inference circuit.
    """
    if len(ds) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    n_in, n_hid, n_out = ck.dims
    if mode == "oracle":
        st = oracle.run(ck.net(), ds.images, ds.labels, learn=False)
        pred = st[:, kernels.PRED]
        counts = {"x": st[:, kernels.N_X], "h": st[:, kernels.N_H], "o": st[:, kernels.N_O]}
        err = st[:, kernels.N_ERR]
    else:
        net = circuit.build(n_in, n_hid, n_out, ck.w1, ck.w2, inference_only=True)
        n = len(ds)
        pred = np.empty(n, dtype=np.int64)
        err = np.empty(n, dtype=np.int64)
        counts = {k: np.empty(n, dtype=np.int64) for k in ("x", "h", "o")}
        for i in range(n):
            trace = circuit.run_sample(net, ds.images[i], int(ds.labels[i]), learning_on=False)
            o = np.zeros(n_out, dtype=bool)
            o[trace.spikes(3, "o")] = True
            c = classify_or(trace)
            pred[i] = c
            err[i] = int((o != oracle.one_hot(int(ds.labels[i]), n_out)).sum())
            for k, step in (("x", 1), ("h", 2), ("o", 3)):
                counts[k][i] = len(trace.spikes(step, k))
    sizes = {"x": n_in, "h": n_hid, "o": n_out}
    return EvalResult(
        accuracy=float((pred == ds.labels).mean()),
        mse=float(0.5 * err.mean()),
        confusion=_confusion(pred, ds.labels, n_out),
        spikes_per_neuron={k: float(v.mean() / sizes[k]) for k, v in counts.items()},
        spikes=int(sum(int(v.sum()) for v in counts.values())),
    )


def classify_or(trace, default: int = -1) -> int:
    c = circuit.classify(trace)
    return default if c is None else c


# -- lockstep -------------------------------------------------------------------

@dataclass
class Divergence:
    sample: int
    step: int
    layer: str
    index: int
    detail: str = ""

    def __str__(self):
        return f"sample {self.sample} step {self.step} layer {self.layer} index {self.index} {self.detail}".rstrip()


@dataclass
class LockstepReport:
    n_samples: int
    divergence: Divergence | None = None

    @property
    def clean(self) -> bool:
        return self.divergence is None

    def __str__(self):
        if self.clean:
            return f"lockstep: clean pass over {self.n_samples} samples"
        return f"lockstep: first divergence at {self.divergence}"


def expected_spikes(fwd: oracle.Forward, bundle: oracle.GradientBundle) -> list[tuple[int, str, np.ndarray]]:
    """Spike sets the circuit must produce for one training frame, in step order."""
    return [
        (2, "h", fwd.h), (2, "h<", fwd.h_start), (2, "h>", fwd.h_stop),
        (3, "o", fwd.o), (3, "o<", fwd.o_start), (3, "o>", fwd.o_stop), (3, "b_h", fwd.b_h),
        (4, "d2+", bundle.d2_plus), (4, "d2-", bundle.d2_minus),
        (5, "h", fwd.h), (5, "o", bundle.d2_plus),
        (6, "hT", bundle.d1_plus_raw), (7, "h", bundle.d1_plus),
        (9, "h", fwd.h), (9, "o", bundle.d2_minus),
        (10, "hT", bundle.d1_minus_raw), (11, "h", bundle.d1_minus),
    ]


class _Lockstep:
    """Advance a circuit and its closed-form twin one sample at a time."""

    def __init__(self, ck: Checkpoint, net_hook=None):
        n_in, n_hid, n_out = ck.dims
        self.net = circuit.build(n_in, n_hid, n_out, ck.w1, ck.w2)
        self.net.check_schedule = False  # off-schedule firing shows up as a divergence
        if net_hook is not None:
            net_hook(self.net)
        self.ref = ck.net()

    def sample(self, i: int, x, label: int, learning_on: bool = True):
        """Returns (trace, bundle, divergence or None)."""
        n_out = self.ref.dims[2]
        trace = circuit.run_sample(self.net, x, label, learning_on)
        fwd = oracle.forward(x, self.ref)
        bundle = oracle.gradients(x, oracle.one_hot(label, n_out), self.ref, fwd)
        for step, layer, want in expected_spikes(fwd, bundle):
            got = np.zeros(len(want), dtype=bool)
            got[trace.spikes(step, layer)] = True
            diff = np.flatnonzero(got != want)
            if len(diff):
                j = int(diff[0])
                kind = "extra spike" if got[j] else "missing spike"
                return trace, bundle, Divergence(i, step, layer, j, kind)
        if learning_on:
            self.ref = oracle.update(self.ref, x, fwd.h, bundle)
        for layer, a, b in (("W1", self.net.w1, self.ref.w1), ("W2", self.net.w2, self.ref.w2)):
            diff = np.flatnonzero(a.ravel() != b.ravel())
            if len(diff):
                return trace, bundle, Divergence(i, self.net.period, layer, int(diff[0]), "weight mismatch")
        try:
            self.net.verify_sync()
        except Exception as exc:  # copy desync is a divergence, not a crash
            return trace, bundle, Divergence(i, self.net.period, "sync", -1, str(exc))
        return trace, bundle, None


def lockstep(ck: Checkpoint, images, labels, n_samples: int | None = None, net_hook=None) -> LockstepReport:
    """Train circuit and oracle side by side, stopping at the first disagreement."""
    n = len(labels) if n_samples is None else min(n_samples, len(labels))
    if n == 0:
        return LockstepReport(0)
    ls = _Lockstep(ck, net_hook)
    for i in range(n):
        _, _, div = ls.sample(i, images[i], int(labels[i]))
        if div is not None:
            return LockstepReport(n, div)
    return LockstepReport(n)


# -- training ---------------------------------------------------------------------

def _d1_windows(epoch: int, d1_counts: np.ndarray, n_hid: int):
    out = []
    for start in range(0, len(d1_counts), D1_WINDOW):
        chunk = d1_counts[start:start + D1_WINDOW]
        out.append((epoch, start, float(chunk.sum() / (len(chunk) * n_hid))))
    return out


def train(config: RunConfig, train_ds: dataio.Dataset, test_ds: dataio.Dataset,
          log=None) -> tuple[RunMetrics, Checkpoint]:
    """Epochs over shuffled training data, evaluating on the test set after each."""
    ck = initial_checkpoint(config)
    n_in, n_hid, n_out = config.dims
    metrics = RunMetrics()
    net = ck.net()
    snn = None
    if config.mode == "snn":
        snn = circuit.build(n_in, n_hid, n_out, net.w1, net.w2)
    elif config.mode == "lockstep":
        ls = _Lockstep(ck)
    epoch = ck.epoch
    for _ in range(config.epochs):
        order = dataio.epoch_order(config.seed, epoch, len(train_ds))
        if config.mode == "oracle":
            st = oracle.run(net, train_ds.images, train_ds.labels, order, learn=config.learning)
            d1 = st[:, kernels.N_D1P] + st[:, kernels.N_D1M]
            metrics.total_spikes += int(frame_spike_counts(st).sum())
        else:
            d1 = np.zeros(len(order), dtype=np.int64)
            for row, s in enumerate(order):
                x, y = train_ds.images[s], int(train_ds.labels[s])
                if snn is not None:
                    trace = circuit.run_sample(snn, x, y, config.learning)
                else:
                    trace, _, div = ls.sample(row, x, y, config.learning)
                    if div is not None:
                        div.sample = int(s)
                        metrics.divergence = asdict(div)
                        metrics.total_spikes = sum(ls.net.spike_totals.values()) - 1
                        return metrics, Checkpoint(ls.net.w1, ls.net.w2, ck.seed, epoch, ck.init)
                d1[row] = len(trace.spikes(7, "h")) + len(trace.spikes(11, "h"))
            w_src = snn if snn is not None else ls.net
            net = oracle.OracleNet(w_src.w1.copy(), w_src.w2.copy())
        metrics.d1_windows += _d1_windows(epoch, d1, n_hid)
        epoch += 1
        ev = evaluate(Checkpoint(net.w1, net.w2), test_ds, "snn" if config.mode == "snn" else "oracle")
        metrics.accuracy.append(ev.accuracy)
        metrics.mse.append(ev.mse)
        metrics.spikes_per_neuron = ev.spikes_per_neuron
        if log:
            log(f"epoch {epoch}: accuracy {ev.accuracy:.4f}  E {ev.mse:.4f}")
    if config.mode != "oracle":
        # the bootstrap spike that starts the chain is not part of any frame
        metrics.total_spikes = sum((snn if snn is not None else ls.net).spike_totals.values()) - 1
    return metrics, Checkpoint(net.w1, net.w2, ck.seed, epoch, ck.init)


# -- traces -----------------------------------------------------------------------

TRACE_HEADER = ("frame", "step", "layer_name", "neuron_index")


def trace_rows(ck: Checkpoint, images, labels, sample_ids, learning_on: bool = True,
               include_chain: bool = True, inference_only: bool = False):
    """Spike rows ``(frame, step, layer, index)`` for the given samples, one frame each."""
    n_in, n_hid, n_out = ck.dims
    net = circuit.build(n_in, n_hid, n_out, ck.w1.copy(), ck.w2.copy(), inference_only=inference_only)
    chain = set(net.chain_names())
    rows = []
    for s in sample_ids:
        trace = circuit.run_sample(net, images[s], int(labels[s]), learning_on)
        rows += [r for r in trace.rows(net.layer_index) if include_chain or r[2] not in chain]
    return rows, net


def write_trace(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        w.writerows(rows)


def read_trace(path) -> list[tuple[int, int, str, int]]:
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        if tuple(header) != TRACE_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        return [(int(a), int(b), c, int(d)) for a, b, c, d in r]


__all__ = [
    "RunConfig", "read_config_file", "Checkpoint", "CheckpointError", "initial_checkpoint",
    "EvalResult", "RunMetrics", "evaluate", "Divergence", "LockstepReport", "lockstep",
    "expected_spikes", "train", "trace_rows", "write_trace", "read_trace",
]
