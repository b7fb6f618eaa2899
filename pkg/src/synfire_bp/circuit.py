"""Builder for the 12-step synfire-gated backpropagation circuit.

Layer roles (names as used in traces):

====== ==========================================================
x      input, refired from ``m_x`` in steps 7 and 11
m_x    relay memory of the input
h      hidden layer; ``h<`` / ``h>`` are its start/stop copies
m_h    relay memory of the hidden layer
hT     backpropagated local gradient layer (carries h in 5 and 9)
b_h    box-function mask of the hidden layer
o      output layer; ``o<`` / ``o>`` are its start/stop copies
t      target (one-hot label)
d2+    output local gradient where the target is missed
d2-    output local gradient where the output fires wrongly
oT-    carrier for the negated transposed weights
g1-g12 gating chain; ``g{s}`` fires one step before frame step s
====== ==========================================================
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from synfire_bp.engine import (
    ConfigurationError,
    FrameTrace,
    Network,
    NeuronParams,
    SynapseKind,
)
from synfire_bp.plasticity import (
    FORWARD,
    FORWARD_COPY,
    NEGATED_TRANSPOSE,
    TRANSPOSE,
    PlasticRule,
    ReinforcementSchedule,
    SyncGroup,
)

PERIOD = 12
INFERENCE_PERIOD = 4

EXC = SynapseKind.EXCITATORY
INH = SynapseKind.INHIBITORY
PLASTIC = SynapseKind.PLASTIC
GATE_ALL = SynapseKind.GATE_ALL
GATE_ONE = SynapseKind.GATE_ONE

# frame steps at which each data layer may fire
SCHEDULE = {
    "x": (1, 7, 11),
    "m_x": (2,),
    "h": (2, 5, 7, 9, 11),
    "h<": (2, 7, 11),
    "h>": (2, 7, 11),
    "m_h": (3,),
    "hT": (5, 6, 9, 10),
    "b_h": (3,),
    "o": (3, 5, 9),
    "o<": (3, 5, 9),
    "o>": (3, 5, 9),
    "t": (3,),
    "d2+": (4,),
    "d2-": (4,),
    "oT-": (5, 9),
}

INFERENCE_SCHEDULE = {"x": (1,), "h": (2,), "o": (3,)}


@dataclass(frozen=True)
class GateWeights:
    standard: int
    to_threshold: int
    to_zero: int

    @classmethod
    def for_params(cls, params: NeuronParams) -> GateWeights:
        base = -params.i_const
        return cls(base + params.v_thr // 2, base + params.v_thr, base)


class CircuitNetwork(Network):
    """A :class:`Network` that knows its layer dimensions and weight roles."""

    def __init__(self, dims, period, reinforcement, params: NeuronParams):
        super().__init__(period, reinforcement)
        self.dims = tuple(dims)
        self.params = params
        self.gates = GateWeights.for_params(params)
        self.w_exc = params.v_thr
        self.inference_only = period == INFERENCE_PERIOD

    @property
    def w1(self) -> np.ndarray:
        return self.group("x->h").weights

    @property
    def w2(self) -> np.ndarray:
        return self.group("h->o").weights

    def chain_names(self):
        return [f"g{s}" for s in range(1, self.period + 1)]

    def schedule_table(self) -> dict[str, list[tuple[int, str, int]]]:
        """Per layer: ``(frame step, gate source, gate weight)`` for every gating input.

        Derived from the wiring, so it doubles as a check of the delays.
        """
        fire_step = {}
        for s in range(1, self.period + 1):
            fire_step[f"g{s}"] = [(s - 2) % self.period + 1]
        for name, layer in self.layers.items():
            if not layer.gating:
                fire_step[name] = sorted(layer.allowed_steps or ())
        table: dict[str, list[tuple[int, str, int]]] = {n: [] for n, l in self.layers.items() if not l.gating}
        for g in self.groups:
            if g.kind not in (GATE_ALL, GATE_ONE) or self.layers[g.target].gating:
                continue
            for fs in fire_step[g.source]:
                arrive = (fs + g.delay) % self.period + 1
                if g.kind is GATE_ONE and arrive not in SCHEDULE.get(g.target, ()):
                    # one-to-one gates also arrive at steps where the source is
                    # restored for learning; only count those that open the target
                    continue
                table[g.target].append((arrive, g.source, int(g.weights)))
        return {n: sorted(v) for n, v in table.items()}


def _validate_dims(n_in, n_hid, n_out):
    for label, n in (("n_in", n_in), ("n_hid", n_hid), ("n_out", n_out)):
        if int(n) < 1:
            raise ConfigurationError(f"{label} must be >= 1, got {n}")


def neuron_count(n_in: int, n_hid: int, n_out: int, gating: int = PERIOD) -> int:
    return 2 * n_in + 6 * n_hid + 7 * n_out + gating


def _add_chain(net: CircuitNetwork, gate_params: NeuronParams):
    names = net.chain_names()
    for s, name in enumerate(names, start=1):
        net.add_layer(name, 1, gate_params, allowed_steps={(s - 2) % net.period + 1}, gating=True)
    for s, name in enumerate(names):
        nxt = names[(s + 1) % len(names)]
        net.connect(f"{name}->{nxt}", name, nxt, GATE_ONE, net.gates.standard)
    net.bootstrap = {"g1": (np.array([0]), net.gates.standard)}


def build(n_in: int, n_hid: int, n_out: int, w1=None, w2=None, *,
          params: NeuronParams | None = None, rule: PlasticRule | None = None,
          reinforcement: ReinforcementSchedule | None = None, error_sign: int = 1,
          inference_only: bool = False) -> CircuitNetwork:
    """Build the full learning circuit (or the 4-step inference-only network).

    ``w1`` has shape (n_hid, n_in) and ``w2`` (n_out, n_hid), in integer weight
    units; both default to zero. ``error_sign=-1`` swaps the roles of ``d2+``
    and ``d2-`` (a diagnostic used to check sign symmetry of learning).
    """
    _validate_dims(n_in, n_hid, n_out)
    params = params or NeuronParams()
    rule = rule or PlasticRule()
    w1 = np.zeros((n_hid, n_in), dtype=np.int16) if w1 is None else np.asarray(w1)
    w2 = np.zeros((n_out, n_hid), dtype=np.int16) if w2 is None else np.asarray(w2)
    gate_params = NeuronParams(params.tau_v, params.tau_u, params.t_ref, 0, params.v_thr)

    if inference_only:
        net = CircuitNetwork((n_in, n_hid, n_out), INFERENCE_PERIOD,
                             ReinforcementSchedule(INFERENCE_PERIOD, ()), params)
        for name, size in (("x", n_in), ("h", n_hid), ("o", n_out)):
            net.add_layer(name, size, params, INFERENCE_SCHEDULE[name])
        _add_chain(net, gate_params)
        net.add_rule("w1", rule)
        net.add_rule("w2", rule.sign_closed())
        net.connect("x->h", "x", "h", PLASTIC, w1, rule="w1")
        net.connect("h->o", "h", "o", PLASTIC, w2, rule="w2")
        for s, target in ((1, "x"), (2, "h"), (3, "o")):
            net.connect(f"g{s}=>{target}", f"g{s}", target, GATE_ALL, net.gates.standard)
        return net.finalize()

    reinforcement = reinforcement or ReinforcementSchedule(PERIOD, {5, 7})
    net = CircuitNetwork((n_in, n_hid, n_out), PERIOD, reinforcement, params)
    sizes = {"x": n_in, "m_x": n_in}
    sizes.update({n: n_hid for n in ("h", "h<", "h>", "m_h", "hT", "b_h")})
    sizes.update({n: n_out for n in ("o", "o<", "o>", "t", "d2+", "d2-", "oT-")})
    for name, size in sizes.items():
        net.add_layer(name, size, params, SCHEDULE[name])
    _add_chain(net, gate_params)

    gw = net.gates
    w_e, w_i = params.v_thr, -params.v_thr
    net.add_rule("w1", rule)
    # the W2 family includes a negated copy, so its range must be sign-closed
    net.add_rule("w2", rule.sign_closed())

    w1 = np.ascontiguousarray(w1, dtype=np.int16)
    w2 = np.ascontiguousarray(w2, dtype=np.int16)
    for tgt in ("h", "h<", "h>"):
        net.connect(f"x->{tgt}", "x", tgt, PLASTIC, w1.copy(), rule="w1")
    for tgt in ("o", "o<", "o>"):
        net.connect(f"h->{tgt}", "h", tgt, PLASTIC, w2.copy(), rule="w2")
    net.connect("o->hT", "o", "hT", PLASTIC, np.ascontiguousarray(w2.T), rule="w2")
    net.connect("oT-->hT", "oT-", "hT", PLASTIC, np.ascontiguousarray(-w2.T), rule="w2")
    net.sync_groups = [
        SyncGroup("W1", {"x->h": FORWARD, "x->h<": FORWARD_COPY, "x->h>": FORWARD_COPY}),
        SyncGroup("W2", {"h->o": FORWARD, "h->o<": FORWARD_COPY, "h->o>": FORWARD_COPY,
                         "o->hT": TRANSPOSE, "oT-->hT": NEGATED_TRANSPOSE}),
    ]

    # relays
    net.connect("x->m_x", "x", "m_x", EXC, w_e)
    net.connect("m_x->x@7", "m_x", "x", EXC, w_e, delay=4)
    net.connect("m_x->x@11", "m_x", "x", EXC, w_e, delay=8)
    net.connect("h->m_h", "h", "m_h", EXC, w_e)
    for tgt in ("h", "hT"):
        net.connect(f"m_h->{tgt}@5", "m_h", tgt, EXC, w_e, delay=1)
        net.connect(f"m_h->{tgt}@9", "m_h", tgt, EXC, w_e, delay=5)

    # box function of the hidden layer
    net.connect("h<->b_h", "h<", "b_h", EXC, w_e)
    net.connect("h>->b_h", "h>", "b_h", INH, w_i)

    # output error split by sign, gated by o< and vetoed by o>
    plus, minus = ("d2+", "d2-") if error_sign > 0 else ("d2-", "d2+")
    net.connect(f"t->{plus}", "t", plus, EXC, w_e)
    net.connect(f"o->{plus}", "o", plus, INH, w_i)
    net.connect(f"o->{minus}", "o", minus, EXC, w_e)
    net.connect(f"t->{minus}", "t", minus, INH, w_i)
    for d in ("d2+", "d2-"):
        net.connect(f"o<=>{d}", "o<", d, GATE_ONE, gw.standard)
        net.connect(f"o>->{d}", "o>", d, INH, w_i)

    # local gradients back into the output family (potentiation at 5, depression at 9)
    for tgt in ("o", "o<", "o>"):
        net.connect(f"d2+->{tgt}@5", "d2+", tgt, EXC, w_e)
        net.connect(f"d2-->{tgt}@9", "d2-", tgt, EXC, w_e, delay=4)
    net.connect("d2-->oT-@5", "d2-", "oT-", EXC, w_e)
    net.connect("d2+->oT-@9", "d2+", "oT-", EXC, w_e, delay=4)

    # backpropagated gradient into the hidden family, masked by b_h
    for tgt in ("h", "h<", "h>"):
        net.connect(f"hT->{tgt}", "hT", tgt, EXC, w_e)
        net.connect(f"b_h=>{tgt}@7", "b_h", tgt, GATE_ONE, gw.to_threshold, delay=3)
        net.connect(f"b_h=>{tgt}@11", "b_h", tgt, GATE_ONE, gw.to_threshold, delay=7)

    # gating chain fan-out, g{s} opens its targets at frame step s
    chain = {
        1: [("x", gw.standard)],
        2: [("m_x", gw.standard), ("h", gw.standard), ("h<", gw.to_threshold), ("h>", gw.to_zero)],
        3: [("m_h", gw.standard), ("o", gw.standard), ("o<", gw.to_threshold),
            ("o>", gw.to_zero), ("t", gw.standard), ("b_h", gw.standard)],
        6: [("hT", gw.to_threshold)],
        7: [("x", gw.standard)],
    }
    chain[5] = [(n, gw.standard) for n in ("h", "hT", "o", "o<", "o>", "oT-")]
    chain[9] = list(chain[5])
    chain[10] = list(chain[6])
    chain[11] = list(chain[7])
    for s in sorted(chain):
        for tgt, w in chain[s]:
            net.connect(f"g{s}=>{tgt}", f"g{s}", tgt, GATE_ALL, w)
    return net.finalize()


def encode_sample(image, label: int, n_in: int, n_out: int, w_input: int = 1024,
                  inference_only: bool = False) -> dict[int, dict[str, tuple[np.ndarray, int]]]:
    """External input for one frame: image bits into ``x`` at step 1, label into ``t`` at step 3."""
    bits = np.asarray(image).ravel()
    if bits.size != n_in:
        raise ValueError(f"image has {bits.size} pixels, circuit expects {n_in}")
    if not 0 <= int(label) < n_out:
        raise ValueError(f"label {label} outside [0, {n_out})")
    schedule = {1: {"x": (np.flatnonzero(bits), w_input)}}
    if not inference_only:
        schedule[3] = {"t": (np.array([int(label)]), w_input)}
    return schedule


def classify(trace: FrameTrace) -> int | None:
    """Lowest output index firing in the output phase, or ``None`` if ``o`` is silent."""
    fired = trace.spikes(3, "o")
    return int(fired.min()) if len(fired) else None


def run_sample(net: CircuitNetwork, image, label: int, learning_on: bool = True) -> FrameTrace:
    n_in, _, n_out = net.dims
    ext = encode_sample(image, label, n_in, n_out, net.w_exc, net.inference_only)
    return net.advance_frame(ext, learning_on=learning_on and not net.inference_only)


def describe(net: CircuitNetwork) -> str:
    """Human-readable listing of layers, synapse groups and the gating schedule."""
    n_in, n_hid, n_out = net.dims
    lines = [
        f"# circuit {n_in}-{n_hid}-{n_out}, period {net.period}",
        f"# neurons {net.n_neurons()}, synapses {net.n_synapses()} "
        f"(plastic {net.n_synapses(plastic_only=True)})",
        f"# gate weights: standard {net.gates.standard}, to_threshold {net.gates.to_threshold}, "
        f"to_zero {net.gates.to_zero}",
        "",
        "[layers]",
    ]
    for i, (name, layer) in enumerate(net.layers.items()):
        steps = ",".join(str(s) for s in sorted(layer.allowed_steps or ()))
        p = layer.params
        lines.append(f"{i:3d} {name:<5} size={layer.size:<5} i_const={p.i_const:<6} "
                     f"v_thr={p.v_thr} steps={steps}")
    lines += ["", "[synapses]"]
    for g in net.groups:
        if g.plastic:
            w = f"plastic[{g.rule}] {g.weights.shape[0]}x{g.weights.shape[1]}"
        else:
            w = f"w={int(g.weights)}"
        lines.append(f"{g.name:<14} {g.source:>4} -> {g.target:<4} {g.kind.value:<22} {w:<24} delay={g.delay}")
    lines += ["", "[sync]"]
    for sg in net.sync_groups:
        members = ", ".join(f"{m}:{r}" for m, r in sg.members.items())
        lines.append(f"{sg.name}: {members}")
    lines += ["", "[schedule]"]
    for name, entries in net.schedule_table().items():
        desc = " ".join(f"{step}:{src}({w})" for step, src, w in entries)
        lines.append(f"{name:<5} {desc}")
    return "\n".join(lines) + "\n"
