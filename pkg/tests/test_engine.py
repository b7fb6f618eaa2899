import numpy as np
import pytest

from synfire_bp import circuit
from synfire_bp.engine import (
    ConfigurationError,
    DelayBuffer,
    FrameLeakError,
    Network,
    NeuronParams,
    NeuronState,
    ScheduleViolation,
    SynapseGroup,
    SynapseKind,
    deliver_spikes,
    integrate_step,
)
from synfire_bp.plasticity import PlasticRule


def _integrate(arrivals, params=None):
    arrivals = np.atleast_1d(np.asarray(arrivals, dtype=np.int64))
    return integrate_step(NeuronState.zeros(len(arrivals)), arrivals, params or NeuronParams())


def test_zero_input_stays_below_threshold():
    state, spikes = _integrate(0)
    assert state.v[0] == -8192
    assert len(spikes) == 0


def test_gate_plus_514_fires_and_resets():
    state, spikes = _integrate(8704 + 514)
    assert list(spikes) == [0]
    assert state.v[0] == 0


def test_gate_plus_512_is_exactly_threshold_and_silent():
    state, spikes = _integrate(8704 + 512)
    assert len(spikes) == 0
    assert state.v[0] == 1024


def test_unit_tau_is_memoryless():
    p = NeuronParams()
    s1, _ = integrate_step(NeuronState.zeros(3), np.array([5000, -300, 9000]), p)
    s2, spikes = integrate_step(s1, np.array([9300, 9300, 9300]), p)
    fresh, spikes_fresh = integrate_step(NeuronState.zeros(3), np.array([9300, 9300, 9300]), p)
    np.testing.assert_array_equal(s2.v, fresh.v)
    np.testing.assert_array_equal(spikes, spikes_fresh)


def test_general_tau_decays_toward_zero():
    p = NeuronParams(tau_v=2, tau_u=4, i_const=0)
    s, spikes = integrate_step(NeuronState.zeros(1), np.array([400]), p)
    assert (s.u[0], s.v[0]) == (400, 400)
    s, _ = integrate_step(s, np.array([0]), p)
    # u: 400 - 400 // 4 = 300; v: 400 - 200 + 300 = 500
    assert (s.u[0], s.v[0]) == (300, 500)


def test_refractory_blocks_refire():
    p = NeuronParams(t_ref=2, i_const=0)
    s, spikes = integrate_step(NeuronState.zeros(1), np.array([2000]), p)
    assert list(spikes) == [0]
    for _ in range(2):
        s, spikes = integrate_step(s, np.array([2000]), p)
        assert len(spikes) == 0
    s, spikes = integrate_step(s, np.array([2000]), p)
    assert list(spikes) == [0]


@pytest.mark.parametrize("kwargs", [dict(tau_v=0), dict(tau_u=0), dict(t_ref=-1), dict(v_thr=0)])
def test_invalid_params_rejected(kwargs):
    with pytest.raises(ConfigurationError):
        NeuronParams(**kwargs)


def test_delay_buffer_length_covers_max_delay():
    assert DelayBuffer(4, 8).length >= 9


def _group(kind, weights, delay=0, size=3):
    g = SynapseGroup("g", "a", "b", kind, weights, delay)
    g._target_size = size
    return g


def test_one_to_one_delivery_next_step():
    buf = DelayBuffer(3, 0)
    deliver_spikes({"a": np.array([1])}, [_group(SynapseKind.EXCITATORY, 1024)], buf, 2, {"b": slice(0, 3)})
    np.testing.assert_array_equal(buf.pop(3), [0, 1024, 0])


def test_plastic_column_delivery_with_delay():
    w = np.array([[-2], [0], [254]], dtype=np.int16)
    buf = DelayBuffer(3, 4)
    deliver_spikes({"a": np.array([0])}, [_group(SynapseKind.PLASTIC, w, delay=4)], buf, 4, {"b": slice(0, 3)})
    for t in range(5, 9):
        assert not buf.pop(t).any()
    np.testing.assert_array_equal(buf.pop(9), [-2, 0, 254])


def test_empty_spikes_leave_buffer_untouched():
    buf = DelayBuffer(3, 2)
    deliver_spikes({"a": np.array([], dtype=np.int64)}, [_group(SynapseKind.EXCITATORY, 1024)], buf, 0,
                   {"b": slice(0, 3)})
    assert buf.total_pending() == 0


def test_delivery_conserves_outgoing_weight():
    rng = np.random.default_rng(3)
    w = (rng.integers(-128, 128, (5, 4)) * 2).astype(np.int16)
    groups = [
        SynapseGroup("p", "a", "b", SynapseKind.PLASTIC, w, 1),
        SynapseGroup("e", "a", "c", SynapseKind.EXCITATORY, 1024, 0),
        SynapseGroup("i", "a", "c", SynapseKind.INHIBITORY, -1024, 2),
    ]
    for g, n in zip(groups, (5, 4, 4)):
        g._target_size = n
    slices = {"b": slice(0, 5), "c": slice(5, 9)}
    buf = DelayBuffer(9, 2)
    spikes = np.array([0, 2, 3])
    deliver_spikes({"a": spikes}, groups, buf, 0, slices)
    assert buf.total_pending() == sum(g.outgoing_sum(spikes) for g in groups)


def test_ring_overrun_is_detected():
    buf = DelayBuffer(1, 0)
    buf.slot(1)[:] = 5
    with pytest.raises(FrameLeakError):
        buf.slot(1 + buf.length)


def test_connect_validation():
    net = Network(4)
    net.add_layer("a", 2)
    net.add_layer("b", 3)
    net.add_layer("g", 1)
    with pytest.raises(ConfigurationError):
        net.connect("ab", "a", "b", SynapseKind.EXCITATORY, 1024)
    with pytest.raises(ConfigurationError):
        net.connect("ab", "a", "b", SynapseKind.GATE_ALL, 8704)
    with pytest.raises(ConfigurationError):
        net.connect("aa", "a", "a", SynapseKind.INHIBITORY, 1024)
    with pytest.raises(ConfigurationError):
        net.connect("ab", "a", "b", SynapseKind.PLASTIC, np.zeros((3, 2)), rule="missing")
    net.add_rule("w", PlasticRule())
    with pytest.raises(ConfigurationError):
        net.connect("ab", "a", "b", SynapseKind.PLASTIC, np.full((3, 2), 3), rule="w")
    with pytest.raises(ConfigurationError):
        net.connect("ab", "a", "b", SynapseKind.PLASTIC, np.zeros((2, 3)), rule="w")
    with pytest.raises(ConfigurationError):
        net.add_layer("a", 1)


def test_accumulator_overflow_is_a_configuration_error():
    net = Network(4)
    net.add_layer("a", 80000)
    net.add_layer("b", 1)
    net.add_rule("w", PlasticRule(clip_lo=-30000, clip_hi=30000))
    net.connect("ab", "a", "b", SynapseKind.PLASTIC, np.zeros((1, 80000)), rule="w")
    with pytest.raises(ConfigurationError, match="overflow"):
        net.finalize()


def test_schedule_violation_raised():
    net = Network(4)
    net.add_layer("a", 1, NeuronParams(i_const=0), allowed_steps=(1,))
    net.finalize()
    net.step({"a": (np.array([0]), 2000)})
    with pytest.raises(ScheduleViolation) as err:
        net.step({"a": (np.array([0]), 2000)})
    assert err.value.layer == "a" and err.value.frame_step == 2


def test_frame_leak_detected():
    net = Network(2)
    net.add_layer("a", 1, NeuronParams(i_const=0))
    net.add_layer("b", 1, NeuronParams(i_const=0))
    net.connect("ab", "a", "b", SynapseKind.EXCITATORY, 2000, delay=3)
    net.finalize()
    with pytest.raises(FrameLeakError):
        net.advance_frame({1: {"a": (np.array([0]), 2000)}})


def _data_spikes(net, trace, step):
    chain = set(net.chain_names())
    return {k: list(v) for k, v in trace.steps[step - 1].spikes.items() if k not in chain}


def test_zero_weight_frame_only_target_fires():
    # with W2 = 0 the start condition of every output is false, so the box
    # gate of d2 stays closed and the error is not propagated
    net = circuit.build(4, 3, 5)
    trace = circuit.run_sample(net, np.zeros(4), 3)
    assert _data_spikes(net, trace, 1) == {}
    assert _data_spikes(net, trace, 2) == {}
    assert _data_spikes(net, trace, 3) == {"t": [3]}
    assert _data_spikes(net, trace, 4) == {}


def test_open_box_missed_target_gives_single_d2_plus():
    w1 = np.full((3, 4), 130, dtype=np.int16)  # 4 * 130 = 520 > 512
    w2 = np.full((5, 3), 2, dtype=np.int16)  # 3 * 2 = 6: started, below threshold
    net = circuit.build(4, 3, 5, w1, w2)
    trace = circuit.run_sample(net, np.ones(4), 3)
    s3 = _data_spikes(net, trace, 3)
    assert s3["o<"] == [0, 1, 2, 3, 4] and "o" not in s3 and "o>" not in s3
    assert _data_spikes(net, trace, 4) == {"d2+": [3]}


def test_learning_off_keeps_weights():
    rng = np.random.default_rng(0)
    w1 = (rng.integers(-120, 121, (6, 8)) * 2).astype(np.int16)
    w2 = (rng.integers(-120, 121, (3, 6)) * 2).astype(np.int16)
    net = circuit.build(8, 6, 3, w1, w2)
    before = {k: v.copy() for k, v in net.weights_of().items()}
    for i in range(10):
        circuit.run_sample(net, rng.integers(0, 2, 8), i % 3, learning_on=False)
    for k, v in net.weights_of().items():
        np.testing.assert_array_equal(v, before[k])


def test_spiking_neurons_reset_to_zero():
    net = circuit.build(4, 3, 2)
    net.record_membrane = True
    for s in range(1, 13):
        rec = net.step(circuit.encode_sample(np.ones(4), 1, 4, 2).get(s))
        for name, idx in rec.spikes.items():
            assert (net.layer_state(name).v[idx] == 0).all()
            assert (rec.membrane[name][idx] > net.layers[name].params.v_thr).all()


def test_trace_rows_are_canonically_ordered():
    net = circuit.build(4, 3, 2)
    trace = circuit.run_sample(net, np.ones(4), 0)
    rows = list(trace.rows(net.layer_index))
    keys = [(f, s, net.layer_index[l], i) for f, s, l, i in rows]
    assert keys == sorted(keys)
    assert len(rows) == sum(trace.spike_counts().values())
