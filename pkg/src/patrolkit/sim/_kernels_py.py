"""Pure-Python simulation kernels.

Fallback twin of the compiled Cython kernels. Both implementations
consume the same bit-generator streams in the same order and perform
identical floating-point operations, so a trial run on either backend
produces bit-identical results. Scalar math goes through ``math.*``
(libm) to match the C side exactly.

Draw order per trial, which both backends must respect:
  1. one uniform to pick the initial region (after computing the
     selection vector, which draws nothing),
  2. the initial region's processing draw (exponential: one uniform;
     half-normal: one standard normal; deterministic: none),
  3. per observation event: the observation draws (one standard normal
     per dimension), then one uniform for the next-region pick, then
     the next region's processing draw.
"""
from __future__ import annotations

import math

import numpy as np

BACKEND = "python"


def _proc_draw(kind: int, param: float, gen) -> float:
    if kind == 0:
        return param
    if kind == 1:
        return -param * math.log1p(-gen.random())
    return abs(param * float(gen.standard_normal()))


def _scan(u: float, weights, n: int) -> int:
    acc = 0.0
    for k in range(n):
        acc += weights[k]
        if u < acc:
            return k
    return n - 1


def _scan_scaled(u: float, weights, total: float, n: int) -> int:
    threshold = u * total
    acc = 0.0
    for k in range(n):
        acc += weights[k]
        if threshold < acc:
            return k
    return n - 1


def _mv_quad(a_rows, dy, d: int) -> float:
    quad = 0.0
    for i in range(d):
        row = a_rows[i]
        s = 0.0
        for j in range(d):
            s += row[j] * dy[j]
        quad += dy[i] * s
    return quad


def _mv_sample(mu, chol, z, d: int) -> list:
    y = [0.0] * d
    for i in range(d):
        row = chol[i]
        s = 0.0
        for j in range(d):
            s += row[j] * z[j]
        y[i] = mu[i] + s
    return y


class _Trial:
    """Per-trial mutable detection bookkeeping shared by the kernels."""

    def __init__(self, low):
        n = low.n
        self.n = n
        self.appearance = low.appearance.tolist()
        self.remove = bool(low.remove_on_detect)
        self.detected = [False] * n
        self.detect_time = [math.nan] * n
        self.delay = [math.nan] * n
        self.obs_count = [0] * n
        self.false_alarms = [0] * n
        self.hyp = [-1] * n
        self.events = 0
        self.pending = sum(1 for a in self.appearance if a >= 0.0)

    def anomalous(self, k: int, t: float) -> bool:
        a = self.appearance[k]
        if a < 0.0 or t < a:
            return False
        return not (self.detected[k] and self.remove)

    def count_event(self, t: float, owner, vehicle: int) -> None:
        self.events += 1
        for k in range(self.n):
            a = self.appearance[k]
            if a >= 0.0 and not self.detected[k] and t >= a:
                if owner is None or owner[k] == vehicle:
                    self.obs_count[k] += 1

    def crossing(self, k: int, t: float, hyp: int = -1) -> None:
        a = self.appearance[k]
        if a >= 0.0 and t >= a and not self.detected[k]:
            self.detected[k] = True
            self.detect_time[k] = t
            self.delay[k] = t - a
            self.hyp[k] = hyp
            self.pending -= 1
        elif a >= 0.0 and t >= a:
            pass  # persistent anomaly already recorded
        else:
            self.false_alarms[k] += 1

    def result(self, end_time: float, mismatch: float = math.nan) -> dict:
        return {
            "detected": np.array(self.detected, dtype=np.uint8),
            "detect_time": np.array(self.detect_time),
            "delay": np.array(self.delay),
            "obs_count": np.array(self.obs_count, dtype=np.int64),
            "false_alarms": np.array(self.false_alarms, dtype=np.int64),
            "events": self.events,
            "end_time": end_time,
            "mismatch": mismatch,
            "hyp": np.array(self.hyp, dtype=np.int32),
        }


def _uni_llr(low_lists, i: int, y: float) -> float:
    c, a0, a1, mu0, mu1 = low_lists
    dy0 = y - mu0[i]
    dy1 = y - mu1[i]
    return c[i] + a0[i] * dy0 * dy0 - a1[i] * dy1 * dy1


def run_cusum_single(low, policy, gen, record=None):
    """One single-vehicle trial with per-region CUSUM detectors.

    ``policy`` is ("stationary", q) | ("markov", P, q_start) |
    ("adaptive", None) | ("adaptive_chain", (nbr_idx, nbr_ptr)).
    """
    n = low.n
    kind = policy[0]
    travel = low.travel.tolist()
    proc_kind = low.proc_kind.tolist()
    proc_param = low.proc_param.tolist()
    eta = low.eta
    horizon = low.horizon
    div = low.divergences.tolist()
    mode = low.obs_mode
    if mode == 0:
        uni = (
            low.u_c.tolist(),
            low.u_a0.tolist(),
            low.u_a1.tolist(),
            low.u_mu0.tolist(),
            low.u_mu1.tolist(),
        )
        u_s0 = low.u_s0.tolist()
        u_s1 = low.u_s1.tolist()
    else:
        d = low.d
        m_mu0 = low.m_mu0.tolist()
        m_L0 = low.m_L0.tolist()
        m_A0 = low.m_A0.tolist()
        m_logdet0 = low.m_logdet0.tolist()
        m_mu1 = low.m_mu1.tolist()
        m_L1 = low.m_L1.tolist()
        m_A1 = low.m_A1.tolist()
        m_logdet1 = low.m_logdet1.tolist()

    trial = _Trial(low)
    stop_when_done = bool(low.stop_when_done) and trial.pending > 0
    lam = [0.0] * n
    scratch = [0.0] * n

    if kind == "stationary":
        qvec = policy[1].tolist()
    elif kind == "markov":
        pmat = policy[1].tolist()
        qstart = policy[2].tolist()
    elif kind == "adaptive_chain":
        nbr_idx = policy[1][0].tolist()
        nbr_ptr = policy[1][1].tolist()

    def adaptive_weights() -> float:
        total = 0.0
        for k in range(n):
            p1 = 1.0 / (1.0 + math.exp(-lam[k]))
            scratch[k] = math.sqrt(p1 / div[k])
            total += scratch[k]
        return total

    mismatch_sum = 0.0
    mismatch_steps = 0

    def pick_next(i: int) -> int:
        """Next region from region i; i < 0 means the initial pick."""
        nonlocal mismatch_sum, mismatch_steps
        if kind == "stationary":
            return _scan(gen.random(), qvec, n)
        if kind == "markov":
            return _scan(gen.random(), pmat[i], n) if i >= 0 else _scan(gen.random(), qstart, n)
        total = adaptive_weights()
        if kind == "adaptive" or i < 0:
            return _scan_scaled(gen.random(), scratch, total, n)
        # adaptive_chain: one Metropolis-Hastings step toward the
        # current target; the normalization of the target cancels in
        # the acceptance ratio. Tracks total-variation distance between
        # the transition row and the target as the chain/target
        # mismatch diagnostic.
        start = nbr_ptr[i]
        end = nbr_ptr[i + 1]
        di = float(end - start)
        row_sum = 0.0
        nbr_target = 0.0
        tv = 0.0
        u = gen.random()
        picked = -1
        acc = 0.0
        for p in range(start, end):
            j = nbr_idx[p]
            dj = float(nbr_ptr[j + 1] - nbr_ptr[j])
            pij = min(1.0 / di, scratch[j] / (scratch[i] * dj))
            tv += abs(pij - scratch[j] / total)
            row_sum += pij
            nbr_target += scratch[j] / total
            if picked < 0:
                acc += pij
                if u < acc:
                    picked = j
        self_prob = 1.0 - row_sum
        tv += abs(self_prob - scratch[i] / total)
        tv += 1.0 - nbr_target - scratch[i] / total  # mass on non-neighbors
        mismatch_sum += 0.5 * tv
        mismatch_steps += 1
        if picked < 0:
            picked = i
        return picked

    i = pick_next(-1)
    t = _proc_draw(proc_kind[i], proc_param[i], gen)
    end_time = horizon
    while t <= horizon:
        anomalous = trial.anomalous(i, t)
        if mode == 0:
            z = float(gen.standard_normal())
            if anomalous:
                y = uni[4][i] + u_s1[i] * z
            else:
                y = uni[3][i] + u_s0[i] * z
            llr = _uni_llr(uni, i, y)
        else:
            z = [float(gen.standard_normal()) for _ in range(d)]
            if anomalous:
                y = _mv_sample(m_mu1[i], m_L1[i], z, d)
            else:
                y = _mv_sample(m_mu0[i], m_L0[i], z, d)
            dy0 = [y[j] - m_mu0[i][j] for j in range(d)]
            dy1 = [y[j] - m_mu1[i][j] for j in range(d)]
            llr = 0.5 * (
                m_logdet0[i]
                - m_logdet1[i]
                + _mv_quad(m_A0[i], dy0, d)
                - _mv_quad(m_A1[i], dy1, d)
            )
        trial.count_event(t, None, 0)
        value = lam[i] + llr
        if value < 0.0:
            value = 0.0
        if value > eta:
            trial.crossing(i, t)
            value = 0.0
        lam[i] = value
        if record is not None:
            record.append((t, i, llr, value))
        if stop_when_done and trial.pending == 0:
            end_time = t
            break
        j = pick_next(i)
        t = t + travel[i][j] + _proc_draw(proc_kind[j], proc_param[j], gen)
        i = j
    mismatch = mismatch_sum / mismatch_steps if mismatch_steps else math.nan
    return trial.result(end_time, mismatch)


def run_cusum_multi(low, policy, gens, record=None):
    """One multi-vehicle trial; shared detector bank, per-vehicle streams.

    ``policy`` is ("stationary", qs, owner_or_None) |
    ("adaptive", owner). Events are processed in completion-time order,
    ties broken by vehicle index.
    """
    n = low.n
    kind = policy[0]
    travel = low.travel.tolist()
    proc_kind = low.proc_kind.tolist()
    proc_param = low.proc_param.tolist()
    eta = low.eta
    horizon = low.horizon
    div = low.divergences.tolist()
    if low.obs_mode != 0:
        raise NotImplementedError("multi-vehicle kernel supports univariate pairs only")
    uni = (
        low.u_c.tolist(),
        low.u_a0.tolist(),
        low.u_a1.tolist(),
        low.u_mu0.tolist(),
        low.u_mu1.tolist(),
    )
    u_s0 = low.u_s0.tolist()
    u_s1 = low.u_s1.tolist()

    m = len(gens)
    if kind == "stationary":
        qs = policy[1].tolist()
        owner = policy[2].tolist() if policy[2] is not None else None
        members = None
    else:
        owner = policy[1].tolist()
        members = [[k for k in range(n) if owner[k] == r] for r in range(m)]
        qs = None

    trial = _Trial(low)
    stop_when_done = bool(low.stop_when_done) and trial.pending > 0
    lam = [0.0] * n

    def pick_next(r: int) -> int:
        gen = gens[r]
        if kind == "stationary":
            return _scan(gen.random(), qs[r], n)
        subset = members[r]
        total = 0.0
        weights = []
        for k in subset:
            p1 = 1.0 / (1.0 + math.exp(-lam[k]))
            wk = math.sqrt(p1 / div[k])
            weights.append(wk)
            total += wk
        local = _scan_scaled(gen.random(), weights, total, len(subset))
        return subset[local]

    pos = [0] * m
    clock = [0.0] * m
    for r in range(m):
        i = pick_next(r)
        pos[r] = i
        clock[r] = _proc_draw(proc_kind[i], proc_param[i], gens[r])

    end_time = horizon
    while True:
        r = 0
        for s in range(1, m):
            if clock[s] < clock[r]:
                r = s
        t = clock[r]
        if t > horizon:
            break
        i = pos[r]
        anomalous = trial.anomalous(i, t)
        z = float(gens[r].standard_normal())
        if anomalous:
            y = uni[4][i] + u_s1[i] * z
        else:
            y = uni[3][i] + u_s0[i] * z
        llr = _uni_llr(uni, i, y)
        trial.count_event(t, owner, r)
        value = lam[i] + llr
        if value < 0.0:
            value = 0.0
        if value > eta:
            trial.crossing(i, t)
            value = 0.0
        lam[i] = value
        if record is not None:
            record.append((t, i, llr, value, r))
        if stop_when_done and trial.pending == 0:
            end_time = t
            break
        j = pick_next(r)
        clock[r] = t + travel[i][j] + _proc_draw(proc_kind[j], proc_param[j], gens[r])
        pos[r] = j
    return trial.result(end_time)


def run_glr_single(low, policy, gen, record=None):
    """One single-vehicle trial with per-region GLR detectors.

    ``policy`` is ("stationary", q) | ("adaptive", None). Region
    statistics are the clamped maxima of per-hypothesis CUSUM
    recursions; the hypothesis with the top score at detection time is
    reported per region.
    """
    n = low.n
    kind = policy[0]
    travel = low.travel.tolist()
    proc_kind = low.proc_kind.tolist()
    proc_param = low.proc_param.tolist()
    eta = low.eta
    horizon = low.horizon
    div = low.divergences.tolist()
    d = low.d
    g_mu0 = low.g_mu0.tolist()
    g_L0 = low.g_L0.tolist()
    g_A0 = low.g_A0.tolist()
    g_logdet0 = low.g_logdet0.tolist()
    hyp_ptr = low.hyp_ptr.tolist()
    hyp_mu = low.hyp_mu.tolist()
    hyp_A = low.hyp_A.tolist()
    hyp_L = low.hyp_L.tolist()
    hyp_logdet = low.hyp_logdet.tolist()
    true_hyp = low.true_hyp.tolist()

    trial = _Trial(low)
    stop_when_done = bool(low.stop_when_done) and trial.pending > 0
    lam = [0.0] * n
    scores = [[0.0] * (hyp_ptr[k + 1] - hyp_ptr[k]) for k in range(n)]
    scratch = [0.0] * n

    if kind == "stationary":
        qvec = policy[1].tolist()

    def pick_next() -> int:
        if kind == "stationary":
            return _scan(gen.random(), qvec, n)
        total = 0.0
        for k in range(n):
            p1 = 1.0 / (1.0 + math.exp(-lam[k]))
            scratch[k] = math.sqrt(p1 / div[k])
            total += scratch[k]
        return _scan_scaled(gen.random(), scratch, total, n)

    i = pick_next()
    t = _proc_draw(proc_kind[i], proc_param[i], gen)
    end_time = horizon
    while t <= horizon:
        anomalous = trial.anomalous(i, t)
        z = [float(gen.standard_normal()) for _ in range(d)]
        if anomalous:
            h = true_hyp[i]
            y = _mv_sample(hyp_mu[h], hyp_L[h], z, d)
        else:
            y = _mv_sample(g_mu0[i], g_L0[i], z, d)
        dy0 = [y[j] - g_mu0[i][j] for j in range(d)]
        quad0 = _mv_quad(g_A0[i], dy0, d)
        base = hyp_ptr[i]
        row = scores[i]
        best = -math.inf
        best_h = 0
        for h in range(len(row)):
            gh = base + h
            dyh = [y[j] - hyp_mu[gh][j] for j in range(d)]
            llr = 0.5 * (g_logdet0[i] - hyp_logdet[gh] + quad0 - _mv_quad(hyp_A[gh], dyh, d))
            prev = row[h]
            if prev < 0.0:
                prev = 0.0
            value = prev + llr
            row[h] = value
            if value > best:
                best = value
                best_h = h
        stat = best if best > 0.0 else 0.0
        trial.count_event(t, None, 0)
        if stat > eta:
            trial.crossing(i, t, best_h)
            for h in range(len(row)):
                row[h] = 0.0
            stat = 0.0
        lam[i] = stat
        if record is not None:
            record.append((t, i, stat))
        if stop_when_done and trial.pending == 0:
            end_time = t
            break
        j = pick_next()
        t = t + travel[i][j] + _proc_draw(proc_kind[j], proc_param[j], gen)
        i = j
    return trial.result(end_time)


def mh_walk(transition, steps: int, start: int, gen) -> np.ndarray:
    """Walk a routing chain and count visits (start state excluded)."""
    n = transition.shape[0]
    rows = transition.tolist()
    counts = [0] * n
    i = start
    for _ in range(steps):
        i = _scan(gen.random(), rows[i], n)
        counts[i] += 1
    return np.array(counts, dtype=np.int64)
