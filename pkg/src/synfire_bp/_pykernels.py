"""Pure numpy reference versions of the hot loops.

Must stay bit-identical to ``_ckernels.pyx``; the test suite runs both.
"""

import numpy as np

# column layout of the per-sample statistics returned by run_oracle
PRED, N_X, N_H, N_HSTART, N_HSTOP, N_O, N_OSTART, N_OSTOP, N_BH = range(9)
N_D2P, N_D2M, N_D1P_RAW, N_D1M_RAW, N_D1P, N_D1M, N_ERR = range(9, 16)
N_STATS = 16


def accumulate_columns(w, idx, out):
    if len(idx):
        out += w[:, idx].sum(axis=1, dtype=np.int32)


def hebbian_update(w, pre, post, delta, lo, hi):
    if len(pre) == 0 or len(post) == 0:
        return
    block = w[np.ix_(post, pre)].astype(np.int32) + delta
    np.clip(block, lo, hi, out=block)
    w[np.ix_(post, pre)] = block


def run_oracle(w1, w2, x, labels, order, v_thr, w1_lo, w1_hi, w2_lo, w2_hi, step, learn):
    n_out = w2.shape[0]
    half = v_thr // 2
    stats = np.zeros((len(order), N_STATS), dtype=np.int64)
    for row, s in enumerate(order):
        active = np.flatnonzero(x[s])
        a1 = w1[:, active].sum(axis=1, dtype=np.int32)
        h = a1 > half
        h_start = a1 > 0
        h_stop = a1 > v_thr
        b_h = h_start & ~h_stop
        hid = np.flatnonzero(h)
        a2 = w2[:, hid].sum(axis=1, dtype=np.int32)
        o = a2 > half
        o_start = a2 > 0
        o_stop = a2 > v_thr
        t = np.zeros(n_out, dtype=bool)
        t[labels[s]] = True
        box = o_start & ~o_stop
        d2p = t & ~o & box
        d2m = o & ~t & box
        st = stats[row]
        fired = np.flatnonzero(o)
        st[PRED] = fired[0] if len(fired) else -1
        st[N_X] = len(active)
        st[N_H] = len(hid)
        st[N_HSTART] = h_start.sum()
        st[N_HSTOP] = h_stop.sum()
        st[N_O] = len(fired)
        st[N_OSTART] = o_start.sum()
        st[N_OSTOP] = o_stop.sum()
        st[N_BH] = b_h.sum()
        st[N_D2P] = d2p.sum()
        st[N_D2M] = d2m.sum()
        st[N_ERR] = (o != t).sum()
        if not (d2p.any() or d2m.any()):
            continue
        err = d2p.astype(np.int32) - d2m.astype(np.int32)
        back = err @ w2.astype(np.int32)
        d1p_raw = back > 0
        d1m_raw = back < 0
        d1p = d1p_raw & b_h
        d1m = d1m_raw & b_h
        st[N_D1P_RAW] = d1p_raw.sum()
        st[N_D1M_RAW] = d1m_raw.sum()
        st[N_D1P] = d1p.sum()
        st[N_D1M] = d1m.sum()
        if learn:
            hebbian_update(w2, hid, np.flatnonzero(d2p), step, w2_lo, w2_hi)
            hebbian_update(w2, hid, np.flatnonzero(d2m), -step, w2_lo, w2_hi)
            hebbian_update(w1, active, np.flatnonzero(d1p), step, w1_lo, w1_hi)
            hebbian_update(w1, active, np.flatnonzero(d1m), -step, w1_lo, w1_hi)
    return stats
