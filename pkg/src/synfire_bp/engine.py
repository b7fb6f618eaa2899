"""Discrete-time integer simulator of CUBA neurons and delayed synapses.

One call to :meth:`Network.step` evaluates a single algorithm step:

1. pop the arrivals scheduled for this step from each layer's delay ring,
2. integrate them (plus forced external input) into the neuron state,
3. route the resulting spikes into the rings at ``t + 1 + delay`` using the
   weights as they are at emission time,
4. apply plasticity to every plastic group from this step's pre/post spikes.

All state is integer. A spike's weighted contribution is fixed when it is
emitted, so plasticity applied later in the same step never changes an
in-flight arrival.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from synfire_bp import kernels
from synfire_bp.plasticity import PlasticRule, ReinforcementSchedule, SyncGroup, verify_sync

ACC_DTYPE = np.int32
WEIGHT_DTYPE = np.int16
_ACC_MAX = np.iinfo(ACC_DTYPE).max

_EMPTY = np.zeros(0, dtype=np.int64)


class ConfigurationError(ValueError):
    pass


class ScheduleViolation(RuntimeError):
    """A layer fired at a frame step where it is not allowed to."""

    def __init__(self, layer: str, frame_step: int, indices):
        self.layer = layer
        self.frame_step = frame_step
        self.indices = list(indices)
        super().__init__(
            f"layer {layer!r} fired off-schedule at frame step {frame_step}: {self.indices[:10]}"
        )


class FrameLeakError(RuntimeError):
    """Arrivals are still pending past the first step of the next frame."""


@dataclass(frozen=True)
class NeuronParams:
    tau_v: int = 1
    tau_u: int = 1
    t_ref: int = 0
    i_const: int = -8192
    v_thr: int = 1024

    def __post_init__(self):
        if self.tau_v < 1 or self.tau_u < 1:
            raise ConfigurationError("time constants must be >= 1")
        if self.t_ref < 0:
            raise ConfigurationError("t_ref must be >= 0")
        if self.v_thr <= 0:
            raise ConfigurationError("v_thr must be positive")


@dataclass
class NeuronState:
    v: np.ndarray
    u: np.ndarray
    refractory_remaining: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> NeuronState:
        return cls(
            np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64)
        )

    def copy(self) -> NeuronState:
        return NeuronState(self.v.copy(), self.u.copy(), self.refractory_remaining.copy())


def integrate_step(state: NeuronState, arrivals: np.ndarray, params: NeuronParams):
    """Advance one layer by one step.

    ``arrivals`` is the summed weighted input reaching each neuron this step.
    Returns ``(new_state, spike_indices)``. With unit time constants the new
    potential is simply ``arrivals + i_const`` and the neuron fires iff it is
    strictly above ``v_thr``.
    """
    state, spikes, _ = _integrate(
        state, arrivals, params.tau_v, params.tau_u, params.t_ref, params.i_const, params.v_thr
    )
    return state, spikes


def _integrate(state: NeuronState, arrivals, tau_v, tau_u, t_ref, i_const, v_thr):
    # parameters may be scalars or per-neuron arrays
    arrivals = np.asarray(arrivals, dtype=np.int64)
    u = state.u - _decay(state.u, tau_u) + arrivals
    v = state.v - _decay(state.v, tau_v) + u + i_const
    ref = state.refractory_remaining
    locked = ref > 0
    if locked.any():
        v = np.where(locked, 0, v)
        fired = (v > v_thr) & ~locked
    else:
        fired = v > v_thr
    spikes = np.flatnonzero(fired)
    v_peak = v.copy()
    v[spikes] = 0
    ref = np.where(locked, ref - 1, 0)
    if np.any(t_ref) and len(spikes):
        ref[spikes] = np.broadcast_to(t_ref, v.shape)[spikes]
    return NeuronState(v, u, ref), spikes, v_peak


def _decay(x: np.ndarray, tau) -> np.ndarray:
    # integer division truncating toward zero, so decay is symmetric in sign
    if np.all(np.asarray(tau) == 1):
        return x
    return np.sign(x) * (np.abs(x) // tau)


class DelayBuffer:
    """Ring of per-neuron input accumulators indexed by arrival step."""

    def __init__(self, size: int, max_delay: int):
        self.length = max_delay + 2
        self.ring = np.zeros((self.length, size), dtype=ACC_DTYPE)
        # absolute step held by each slot, -1 when the slot is empty
        self._slot_step = np.full(self.length, -1, dtype=np.int64)

    def slot(self, t_arrival: int) -> np.ndarray:
        k = t_arrival % self.length
        if self._slot_step[k] != t_arrival:
            if self._slot_step[k] >= 0 and self.ring[k].any():
                raise FrameLeakError(
                    f"delay ring overrun: slot for step {self._slot_step[k]} still pending"
                )
            self.ring[k] = 0
            self._slot_step[k] = t_arrival
        return self.ring[k]

    def pop(self, t: int) -> np.ndarray:
        k = t % self.length
        if self._slot_step[k] != t:
            return np.zeros(self.ring.shape[1], dtype=ACC_DTYPE)
        out = self.ring[k].copy()
        self.ring[k] = 0
        self._slot_step[k] = -1
        return out

    def pending_after(self, t: int) -> list[int]:
        """Steps later than ``t`` that still hold nonzero input."""
        return sorted(
            int(s) for k, s in enumerate(self._slot_step) if s > t and self.ring[k].any()
        )

    def total_pending(self) -> int:
        return int(self.ring.astype(np.int64).sum())

    def clear(self):
        self.ring[:] = 0
        self._slot_step[:] = -1


class SynapseKind(str, enum.Enum):
    PLASTIC = "plastic-all-to-all"
    EXCITATORY = "excitatory-one-to-one"
    INHIBITORY = "inhibitory-one-to-one"
    GATE_ALL = "gate-one-to-all"
    GATE_ONE = "gate-one-to-one"


@dataclass
class Layer:
    name: str
    size: int
    params: NeuronParams
    allowed_steps: frozenset[int] | None = None
    gating: bool = False


@dataclass
class SynapseGroup:
    name: str
    source: str
    target: str
    kind: SynapseKind
    weights: int | np.ndarray
    delay: int = 0
    rule: str | None = None
    _target_size: int = field(default=0, repr=False)

    @property
    def plastic(self) -> bool:
        return self.kind is SynapseKind.PLASTIC

    def fan_in_bound(self) -> int:
        """Largest absolute input one target neuron can receive from this group per spike wave."""
        if self.plastic:
            return int(np.abs(np.asarray(self.weights, dtype=np.int64)).sum(axis=1).max(initial=0))
        return abs(int(self.weights))

    def outgoing_sum(self, spikes: np.ndarray) -> int:
        if len(spikes) == 0:
            return 0
        if self.plastic:
            return int(self.weights[:, spikes].astype(np.int64).sum())
        if self.kind is SynapseKind.GATE_ALL:
            return int(self.weights) * self._target_size * len(spikes)
        return int(self.weights) * len(spikes)


def deliver_spikes(spikes: Mapping[str, np.ndarray], groups, buffer: DelayBuffer, t: int,
                   slices: Mapping[str, slice]):
    """Route the spikes emitted at step ``t`` into the delay ring.

    ``groups`` is an iterable of :class:`SynapseGroup`; each adds its weights
    into the target layer's accumulators (``slices`` locates layers inside the
    flat ring) at arrival step ``t + 1 + delay``.
    """
    for g in groups:
        src = spikes.get(g.source)
        if src is None or len(src) == 0:
            continue
        acc = buffer.slot(t + 1 + g.delay)[slices[g.target]]
        if g.kind is SynapseKind.PLASTIC:
            kernels.accumulate_columns(g.weights, src, acc)
        elif g.kind is SynapseKind.GATE_ALL:
            acc += ACC_DTYPE(g.weights * len(src))
        else:
            np.add.at(acc, src, ACC_DTYPE(g.weights))
    return buffer


@dataclass
class StepRecord:
    t: int
    frame_step: int
    spikes: dict[str, np.ndarray]
    # (group, pre indices, post indices, applied delta before saturation)
    weight_events: list[tuple[str, np.ndarray, np.ndarray, int]]
    membrane: dict[str, np.ndarray] | None = None


@dataclass
class FrameTrace:
    frame: int
    steps: list[StepRecord]

    def spikes(self, frame_step: int, layer: str) -> np.ndarray:
        return self.steps[frame_step - 1].spikes.get(layer, _EMPTY)

    def spike_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for rec in self.steps:
            for name, idx in rec.spikes.items():
                counts[name] = counts.get(name, 0) + len(idx)
        return counts

    def rows(self, layer_order: Mapping[str, int]):
        """Yield ``(frame, step, layer, index)`` in canonical export order."""
        for rec in self.steps:
            for name in sorted(rec.spikes, key=layer_order.__getitem__):
                for i in rec.spikes[name]:
                    yield self.frame, rec.frame_step, name, int(i)


class Network:
    """Layered spiking network with delayed synapses and plastic groups.

    Layers and groups are added with :meth:`add_layer` / :meth:`connect`, then
    :meth:`finalize` validates the wiring and allocates state.
    """

    def __init__(self, period: int, reinforcement: ReinforcementSchedule | None = None):
        self.period = period
        self.reinforcement = reinforcement or ReinforcementSchedule(period=period, active_steps=())
        self.layers: dict[str, Layer] = {}
        self.groups: list[SynapseGroup] = []
        self.rules: dict[str, PlasticRule] = {}
        self.sync_groups: list[SyncGroup] = []
        self.bootstrap: dict[str, tuple[np.ndarray, int]] = {}
        self.check_schedule = True
        self.record_membrane = False
        self.t = 0
        self.frame = 0
        self.spike_totals: dict[str, int] = {}
        self._finalized = False

    # -- construction -------------------------------------------------------

    def add_layer(self, name: str, size: int, params: NeuronParams | None = None,
                  allowed_steps=None, gating: bool = False) -> Layer:
        if name in self.layers:
            raise ConfigurationError(f"duplicate layer {name!r}")
        if size < 1:
            raise ConfigurationError(f"layer {name!r} must have at least one neuron")
        allowed = frozenset(allowed_steps) if allowed_steps is not None else None
        layer = Layer(name, size, params or NeuronParams(), allowed, gating)
        self.layers[name] = layer
        return layer

    def connect(self, name: str, source: str, target: str, kind: SynapseKind, weights,
                delay: int = 0, rule: str | None = None) -> SynapseGroup:
        kind = SynapseKind(kind)
        src, tgt = self.layers[source], self.layers[target]
        if delay < 0:
            raise ConfigurationError(f"{name}: negative delay")
        if kind in (SynapseKind.EXCITATORY, SynapseKind.INHIBITORY, SynapseKind.GATE_ONE):
            if src.size != tgt.size:
                raise ConfigurationError(f"{name}: one-to-one needs equal sizes ({src.size} vs {tgt.size})")
        if kind is SynapseKind.GATE_ALL and src.size != 1:
            raise ConfigurationError(f"{name}: one-to-all gate source must be a single neuron")
        if kind is SynapseKind.EXCITATORY and weights <= 0:
            raise ConfigurationError(f"{name}: excitatory weight must be positive")
        if kind is SynapseKind.INHIBITORY and weights >= 0:
            raise ConfigurationError(f"{name}: inhibitory weight must be negative")
        if kind is SynapseKind.PLASTIC:
            w = np.ascontiguousarray(weights, dtype=WEIGHT_DTYPE)
            if w.shape != (tgt.size, src.size):
                raise ConfigurationError(f"{name}: weight shape {w.shape} != {(tgt.size, src.size)}")
            if rule is None or rule not in self.rules:
                raise ConfigurationError(f"{name}: plastic group needs a registered rule")
            r = self.rules[rule]
            if w.size and (w.min() < r.clip_lo or w.max() > r.clip_hi or (w % r.step_granularity).any()):
                raise ConfigurationError(f"{name}: weights outside rule range or granularity")
            weights = w
        else:
            weights = int(weights)
        if any(g.name == name for g in self.groups):
            raise ConfigurationError(f"duplicate synapse group {name!r}")
        g = SynapseGroup(name, source, target, kind, weights, delay, rule)
        g._target_size = tgt.size
        self.groups.append(g)
        self._finalized = False
        return g

    def add_rule(self, name: str, rule: PlasticRule):
        self.rules[name] = rule

    def finalize(self):
        fan_in: dict[str, int] = {name: 0 for name in self.layers}
        for g in self.groups:
            fan_in[g.target] += g.fan_in_bound()
        for name, bound in fan_in.items():
            # plastic groups can drift anywhere inside their clip range
            worst = bound
            for g in self.groups:
                if g.target == name and g.plastic:
                    r = self.rules[g.rule]
                    worst += self.layers[g.source].size * max(-r.clip_lo, r.clip_hi) - g.fan_in_bound()
            if worst + abs(self.layers[name].params.i_const) > _ACC_MAX:
                raise ConfigurationError(
                    f"layer {name!r}: worst-case input {worst} overflows the 32-bit accumulator"
                )
        self.layer_index = {name: i for i, name in enumerate(self.layers)}
        names = list(self.layers)
        sizes = np.array([self.layers[n].size for n in names], dtype=np.int64)
        self._starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        self.slices = {n: slice(int(a), int(a + k)) for n, a, k in zip(names, self._starts, sizes)}
        self._names = names
        n_total = int(sizes.sum())

        def per_neuron(attr):
            return np.repeat([getattr(self.layers[n].params, attr) for n in names], sizes).astype(np.int64)

        self._tau_v, self._tau_u, self._t_ref = (per_neuron(a) for a in ("tau_v", "tau_u", "t_ref"))
        self._i_const, self._v_thr = per_neuron("i_const"), per_neuron("v_thr")
        self._allowed = np.ones((self.period + 1, n_total), dtype=bool)
        for n, layer in self.layers.items():
            if layer.allowed_steps is not None:
                for s in range(1, self.period + 1):
                    self._allowed[s, self.slices[n]] = s in layer.allowed_steps
        self._out = {name: [g for g in self.groups if g.source == name] for name in self.layers}
        self._plastic = [g for g in self.groups if g.plastic]
        self._group_by_name = {g.name: g for g in self.groups}
        max_delay = max((g.delay for g in self.groups), default=0)
        self.buffer = DelayBuffer(n_total, max_delay)
        self.state = NeuronState.zeros(n_total)
        self._finalized = True
        self.reset()
        return self

    # -- accessors ------------------------------------------------------------

    def group(self, name: str) -> SynapseGroup:
        return self._group_by_name[name]

    def weights_of(self) -> dict[str, np.ndarray]:
        return {g.name: g.weights for g in self._plastic}

    def n_neurons(self) -> int:
        return sum(l.size for l in self.layers.values())

    def n_synapses(self, plastic_only: bool = False) -> int:
        total = 0
        for g in self.groups:
            if g.plastic:
                total += g.weights.size
            elif not plastic_only:
                total += self.layers[g.target].size
        return total

    def verify_sync(self, raise_on_error: bool = True) -> dict[str, int]:
        return verify_sync(self.sync_groups, self.weights_of(), raise_on_error)

    # -- simulation ---------------------------------------------------------

    def layer_state(self, name: str) -> NeuronState:
        sl = self.slices[name]
        st = self.state
        return NeuronState(st.v[sl], st.u[sl], st.refractory_remaining[sl])

    def reset(self):
        """Clear neuron state and the delay ring, then fire the bootstrap step 0."""
        self.state = NeuronState.zeros(len(self._i_const))
        self.buffer.clear()
        self.t = 0
        self.frame = 0
        self.spike_totals = {n: 0 for n in self.layers}
        if self.bootstrap:
            self._run_step(0, self.bootstrap, learning_on=False, check=False)

    def frame_step(self, t: int) -> int:
        return (t - 1) % self.period + 1

    def step(self, external: Mapping[str, tuple[np.ndarray, int]] | None = None,
             learning_on: bool = True) -> StepRecord:
        if not self._finalized:
            raise ConfigurationError("network not finalized")
        self.t += 1
        return self._run_step(self.t, external or {}, learning_on, self.check_schedule)

    def _split(self, fired: np.ndarray) -> dict[str, np.ndarray]:
        bounds = np.searchsorted(fired, self._starts)
        bounds = np.append(bounds, len(fired))
        out = {}
        for i in np.flatnonzero(np.diff(bounds)):
            out[self._names[i]] = fired[bounds[i]:bounds[i + 1]] - self._starts[i]
        return out

    def _run_step(self, t, external, learning_on, check) -> StepRecord:
        fstep = self.frame_step(t) if t > 0 else 0
        arrivals = self.buffer.pop(t)
        for name, (idx, w) in external.items():
            np.add.at(arrivals, np.asarray(idx, dtype=np.int64) + self.slices[name].start, ACC_DTYPE(w))
        self.state, fired, v_peak = _integrate(
            self.state, arrivals, self._tau_v, self._tau_u, self._t_ref, self._i_const, self._v_thr
        )
        if check and len(fired):
            bad = fired[~self._allowed[fstep, fired]]
            if len(bad):
                name, idx = next(iter(self._split(bad).items()))
                raise ScheduleViolation(name, fstep, idx)
        spikes = self._split(fired)
        for name, idx in spikes.items():
            self.spike_totals[name] += len(idx)
        membrane = None
        if self.record_membrane:
            membrane = {n: v_peak[sl].copy() for n, sl in self.slices.items()}
        deliver_spikes(spikes, (g for s in spikes for g in self._out[s]), self.buffer, t, self.slices)
        events = []
        if learning_on and t > 0:
            r = self.reinforcement(t)
            for g in self._plastic:
                pre = spikes.get(g.source)
                post = spikes.get(g.target)
                if pre is None or post is None:
                    continue
                rule = self.rules[g.rule]
                delta = rule.delta(r)
                kernels.hebbian_update(g.weights, pre, post, delta, rule.clip_lo, rule.clip_hi)
                events.append((g.name, pre, post, delta))
        return StepRecord(t, fstep, spikes, events, membrane)

    def advance_frame(self, external_spikes: Mapping[int, Mapping[str, tuple[np.ndarray, int]]] | None = None,
                      learning_on: bool = True) -> FrameTrace:
        """Run one full gating cycle.

        ``external_spikes`` maps frame step to ``{layer: (indices, weight)}``
        injections, as produced by the circuit's sample encoder.
        """
        if self.frame_step(self.t + 1) != 1:
            raise ConfigurationError(f"not at a frame boundary (t={self.t})")
        external_spikes = external_spikes or {}
        records = [
            self.step(external_spikes.get(s), learning_on) for s in range(1, self.period + 1)
        ]
        leaked = self.buffer.pending_after(self.t + 1)
        if leaked:
            raise FrameLeakError(f"arrivals pending beyond next frame start: {leaked}")
        trace = FrameTrace(self.frame, records)
        self.frame += 1
        return trace
