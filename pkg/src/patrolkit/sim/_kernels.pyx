#cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled simulation kernels.

Twin of ``_kernels_py``: same draw order, same operation order, same
libm calls, so trials are bit-identical across backends. The kernels
drive numpy bit generators through the C API (npyrandom), which
consumes the underlying streams exactly like the Python-level
``Generator.random`` / ``Generator.standard_normal`` calls.
"""
import numpy as np

cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport exp, fabs, log1p, sqrt, INFINITY, NAN
from libc.stdlib cimport free, malloc
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport (
    random_standard_normal,
    random_standard_uniform,
)

cnp.import_array()

BACKEND = "compiled"


cdef bitgen_t *_bitgen(gen) except NULL:
    capsule = gen.bit_generator.capsule
    return <bitgen_t *> PyCapsule_GetPointer(capsule, "BitGenerator")


cdef inline double _proc_draw(int kind, double param, bitgen_t *rng) noexcept:
    if kind == 0:
        return param
    if kind == 1:
        return -param * log1p(-random_standard_uniform(rng))
    return fabs(param * random_standard_normal(rng))


cdef inline Py_ssize_t _scan(double u, double[::1] weights, Py_ssize_t n) noexcept:
    cdef double acc = 0.0
    cdef Py_ssize_t k
    for k in range(n):
        acc += weights[k]
        if u < acc:
            return k
    return n - 1


cdef inline Py_ssize_t _scan_row(double u, double[:, ::1] rows, Py_ssize_t i, Py_ssize_t n) noexcept:
    cdef double acc = 0.0
    cdef Py_ssize_t k
    for k in range(n):
        acc += rows[i, k]
        if u < acc:
            return k
    return n - 1


cdef inline Py_ssize_t _scan_scaled(double u, double[::1] weights, double total, Py_ssize_t n) noexcept:
    cdef double threshold = u * total
    cdef double acc = 0.0
    cdef Py_ssize_t k
    for k in range(n):
        acc += weights[k]
        if threshold < acc:
            return k
    return n - 1


cdef inline double _mv_quad(double[:, :, ::1] A, Py_ssize_t idx, double *dy, Py_ssize_t d) noexcept:
    cdef double quad = 0.0
    cdef double s
    cdef Py_ssize_t i, j
    for i in range(d):
        s = 0.0
        for j in range(d):
            s += A[idx, i, j] * dy[j]
        quad += dy[i] * s
    return quad


cdef inline void _mv_sample(double[:, ::1] mu, double[:, :, ::1] chol, Py_ssize_t idx,
                            double *z, double *y, Py_ssize_t d) noexcept:
    cdef double s
    cdef Py_ssize_t i, j
    for i in range(d):
        s = 0.0
        for j in range(d):
            s += chol[idx, i, j] * z[j]
        y[i] = mu[idx, i] + s


cdef class _Trial:
    """Per-trial detection bookkeeping; mirrors _kernels_py._Trial."""

    cdef Py_ssize_t n
    cdef double[::1] appearance
    cdef bint remove
    cdef cnp.uint8_t[::1] detected
    cdef double[::1] detect_time
    cdef double[::1] delay
    cdef cnp.int64_t[::1] obs_count
    cdef cnp.int64_t[::1] false_alarms
    cdef cnp.int32_t[::1] hyp
    cdef long long events
    cdef int pending
    cdef object _arrays

    def __init__(self, low):
        cdef Py_ssize_t n = low.n
        self.n = n
        self.appearance = low.appearance
        self.remove = bool(low.remove_on_detect)
        detected = np.zeros(n, dtype=np.uint8)
        detect_time = np.full(n, np.nan)
        delay = np.full(n, np.nan)
        obs_count = np.zeros(n, dtype=np.int64)
        false_alarms = np.zeros(n, dtype=np.int64)
        hyp = np.full(n, -1, dtype=np.int32)
        self._arrays = (detected, detect_time, delay, obs_count, false_alarms, hyp)
        self.detected = detected
        self.detect_time = detect_time
        self.delay = delay
        self.obs_count = obs_count
        self.false_alarms = false_alarms
        self.hyp = hyp
        self.events = 0
        cdef Py_ssize_t k
        cdef int pending = 0
        for k in range(n):
            if self.appearance[k] >= 0.0:
                pending += 1
        self.pending = pending

    cdef inline bint anomalous(self, Py_ssize_t k, double t) noexcept:
        cdef double a = self.appearance[k]
        if a < 0.0 or t < a:
            return False
        return not (self.detected[k] and self.remove)

    cdef inline void count_event(self, double t, cnp.int32_t[::1] owner, int vehicle) noexcept:
        cdef Py_ssize_t k
        cdef double a
        self.events += 1
        for k in range(self.n):
            a = self.appearance[k]
            if a >= 0.0 and not self.detected[k] and t >= a:
                if owner is None or owner[k] == vehicle:
                    self.obs_count[k] += 1

    cdef inline void crossing(self, Py_ssize_t k, double t, int hyp) noexcept:
        cdef double a = self.appearance[k]
        if a >= 0.0 and t >= a and not self.detected[k]:
            self.detected[k] = 1
            self.detect_time[k] = t
            self.delay[k] = t - a
            self.hyp[k] = hyp
            self.pending -= 1
        elif a >= 0.0 and t >= a:
            pass  # persistent anomaly already recorded
        else:
            self.false_alarms[k] += 1

    def result(self, double end_time, double mismatch=NAN):
        detected, detect_time, delay, obs_count, false_alarms, hyp = self._arrays
        return {
            "detected": detected,
            "detect_time": detect_time,
            "delay": delay,
            "obs_count": obs_count,
            "false_alarms": false_alarms,
            "events": int(self.events),
            "end_time": end_time,
            "mismatch": mismatch,
            "hyp": hyp,
        }


def run_cusum_single(low, policy, gen, record=None):
    """One single-vehicle trial with per-region CUSUM detectors."""
    cdef Py_ssize_t n = low.n
    kind_name = policy[0]
    cdef int kind = ("stationary", "markov", "adaptive", "adaptive_chain").index(kind_name)
    cdef double[:, ::1] travel = low.travel
    cdef cnp.int32_t[::1] proc_kind = low.proc_kind
    cdef double[::1] proc_param = low.proc_param
    cdef double eta = low.eta
    cdef double horizon = low.horizon
    cdef double[::1] div = low.divergences
    cdef int mode = low.obs_mode
    cdef bitgen_t *rng = _bitgen(gen)

    # mode 0 arrays
    cdef double[::1] u_c, u_a0, u_a1, u_mu0, u_mu1, u_s0, u_s1
    # mode 1 arrays
    cdef Py_ssize_t d = 0
    cdef double[:, ::1] m_mu0, m_mu1
    cdef double[:, :, ::1] m_L0, m_A0, m_L1, m_A1
    cdef double[::1] m_logdet0, m_logdet1
    if mode == 0:
        u_c = low.u_c
        u_a0 = low.u_a0
        u_a1 = low.u_a1
        u_mu0 = low.u_mu0
        u_mu1 = low.u_mu1
        u_s0 = low.u_s0
        u_s1 = low.u_s1
    else:
        d = low.d
        m_mu0 = low.m_mu0
        m_L0 = low.m_L0
        m_A0 = low.m_A0
        m_logdet0 = low.m_logdet0
        m_mu1 = low.m_mu1
        m_L1 = low.m_L1
        m_A1 = low.m_A1
        m_logdet1 = low.m_logdet1

    cdef _Trial trial = _Trial(low)
    cdef bint stop_when_done = bool(low.stop_when_done) and trial.pending > 0
    lam_arr = np.zeros(n)
    scratch_arr = np.zeros(n)
    cdef double[::1] lam = lam_arr
    cdef double[::1] scratch = scratch_arr

    cdef double[::1] qvec
    cdef double[:, ::1] pmat
    cdef double[::1] qstart
    cdef cnp.int32_t[::1] nbr_idx
    cdef cnp.int32_t[::1] nbr_ptr
    if kind == 0:
        qvec = policy[1]
    elif kind == 1:
        pmat = policy[1]
        qstart = policy[2]
    elif kind == 3:
        nbr_idx = policy[1][0]
        nbr_ptr = policy[1][1]

    cdef double mismatch_sum = 0.0
    cdef long long mismatch_steps = 0
    cdef double total, p1, u, acc, di, dj, pij, row_sum, nbr_target, tv, self_prob
    cdef Py_ssize_t i, j, k, p, picked
    cdef double t, z, y, llr, value, dy0, dy1
    cdef bint anomalous
    cdef double zbuf[64]
    cdef double ybuf[64]
    cdef double dybuf[64]

    # --- initial region ---
    i = -1
    if kind == 0:
        i = _scan(random_standard_uniform(rng), qvec, n)
    elif kind == 1:
        i = _scan(random_standard_uniform(rng), qstart, n)
    else:
        total = 0.0
        for k in range(n):
            p1 = 1.0 / (1.0 + exp(-lam[k]))
            scratch[k] = sqrt(p1 / div[k])
            total += scratch[k]
        i = _scan_scaled(random_standard_uniform(rng), scratch, total, n)
    t = _proc_draw(proc_kind[i], proc_param[i], rng)
    cdef double end_time = horizon

    while t <= horizon:
        anomalous = trial.anomalous(i, t)
        if mode == 0:
            z = random_standard_normal(rng)
            if anomalous:
                y = u_mu1[i] + u_s1[i] * z
            else:
                y = u_mu0[i] + u_s0[i] * z
            dy0 = y - u_mu0[i]
            dy1 = y - u_mu1[i]
            llr = u_c[i] + u_a0[i] * dy0 * dy0 - u_a1[i] * dy1 * dy1
        else:
            for k in range(d):
                zbuf[k] = random_standard_normal(rng)
            if anomalous:
                _mv_sample(m_mu1, m_L1, i, zbuf, ybuf, d)
            else:
                _mv_sample(m_mu0, m_L0, i, zbuf, ybuf, d)
            for k in range(d):
                dybuf[k] = ybuf[k] - m_mu0[i, k]
            dy0 = _mv_quad(m_A0, i, dybuf, d)
            for k in range(d):
                dybuf[k] = ybuf[k] - m_mu1[i, k]
            dy1 = _mv_quad(m_A1, i, dybuf, d)
            llr = 0.5 * (m_logdet0[i] - m_logdet1[i] + dy0 - dy1)
        trial.count_event(t, None, 0)
        value = lam[i] + llr
        if value < 0.0:
            value = 0.0
        if value > eta:
            trial.crossing(i, t, -1)
            value = 0.0
        lam[i] = value
        if record is not None:
            record.append((t, i, llr, value))
        if stop_when_done and trial.pending == 0:
            end_time = t
            break
        # --- next region ---
        if kind == 0:
            j = _scan(random_standard_uniform(rng), qvec, n)
        elif kind == 1:
            j = _scan_row(random_standard_uniform(rng), pmat, i, n)
        else:
            total = 0.0
            for k in range(n):
                p1 = 1.0 / (1.0 + exp(-lam[k]))
                scratch[k] = sqrt(p1 / div[k])
                total += scratch[k]
            if kind == 2:
                j = _scan_scaled(random_standard_uniform(rng), scratch, total, n)
            else:
                di = <double>(nbr_ptr[i + 1] - nbr_ptr[i])
                row_sum = 0.0
                nbr_target = 0.0
                tv = 0.0
                u = random_standard_uniform(rng)
                picked = -1
                acc = 0.0
                for p in range(nbr_ptr[i], nbr_ptr[i + 1]):
                    j = nbr_idx[p]
                    dj = <double>(nbr_ptr[j + 1] - nbr_ptr[j])
                    pij = min(1.0 / di, scratch[j] / (scratch[i] * dj))
                    tv += fabs(pij - scratch[j] / total)
                    row_sum += pij
                    nbr_target += scratch[j] / total
                    if picked < 0:
                        acc += pij
                        if u < acc:
                            picked = j
                self_prob = 1.0 - row_sum
                tv += fabs(self_prob - scratch[i] / total)
                tv += 1.0 - nbr_target - scratch[i] / total
                mismatch_sum += 0.5 * tv
                mismatch_steps += 1
                if picked < 0:
                    picked = i
                j = picked
        t = t + travel[i, j] + _proc_draw(proc_kind[j], proc_param[j], rng)
        i = j
    cdef double mismatch = mismatch_sum / mismatch_steps if mismatch_steps else NAN
    return trial.result(end_time, mismatch)


def run_cusum_multi(low, policy, gens, record=None):
    """One multi-vehicle trial; shared detector bank, per-vehicle streams."""
    cdef Py_ssize_t n = low.n
    kind_name = policy[0]
    cdef int kind = 0 if kind_name == "stationary" else 1
    cdef double[:, ::1] travel = low.travel
    cdef cnp.int32_t[::1] proc_kind = low.proc_kind
    cdef double[::1] proc_param = low.proc_param
    cdef double eta = low.eta
    cdef double horizon = low.horizon
    cdef double[::1] div = low.divergences
    if low.obs_mode != 0:
        raise NotImplementedError("multi-vehicle kernel supports univariate pairs only")
    cdef double[::1] u_c = low.u_c
    cdef double[::1] u_a0 = low.u_a0
    cdef double[::1] u_a1 = low.u_a1
    cdef double[::1] u_mu0 = low.u_mu0
    cdef double[::1] u_mu1 = low.u_mu1
    cdef double[::1] u_s0 = low.u_s0
    cdef double[::1] u_s1 = low.u_s1

    cdef Py_ssize_t m = len(gens)
    cdef double[:, ::1] qs
    cdef cnp.int32_t[::1] owner = None
    cdef cnp.int32_t[::1] member_idx
    cdef cnp.int32_t[::1] member_ptr
    if kind == 0:
        qs = policy[1]
        if policy[2] is not None:
            owner = policy[2]
    else:
        owner = policy[1]
        members = [[k for k in range(n) if owner[k] == r] for r in range(m)]
        ptr = np.zeros(m + 1, dtype=np.int32)
        idx = []
        for r_, s_ in enumerate(members):
            idx.extend(s_)
            ptr[r_ + 1] = len(idx)
        member_idx = np.array(idx, dtype=np.int32)
        member_ptr = ptr

    cdef _Trial trial = _Trial(low)
    cdef bint stop_when_done = bool(low.stop_when_done) and trial.pending > 0
    lam_arr = np.zeros(n)
    scratch_arr = np.zeros(n)
    pos_arr = np.zeros(m, dtype=np.int64)
    clock_arr = np.zeros(m)
    cdef double[::1] lam = lam_arr
    cdef double[::1] scratch = scratch_arr
    cdef cnp.int64_t[::1] pos = pos_arr
    cdef double[::1] clock = clock_arr

    cdef double total, p1, t, z, y, llr, value, dy0, dy1
    cdef double end_time = horizon
    cdef Py_ssize_t i, j, k, s, r, local, count
    cdef bint anomalous

    cdef bitgen_t **rngs = <bitgen_t **> malloc(m * sizeof(bitgen_t *))
    if rngs == NULL:
        raise MemoryError()
    try:
        for r in range(m):
            rngs[r] = _bitgen(gens[r])

        for r in range(m):
            if kind == 0:
                i = _scan_row(random_standard_uniform(rngs[r]), qs, r, n)
            else:
                total = 0.0
                count = member_ptr[r + 1] - member_ptr[r]
                for s in range(count):
                    k = member_idx[member_ptr[r] + s]
                    p1 = 1.0 / (1.0 + exp(-lam[k]))
                    scratch[s] = sqrt(p1 / div[k])
                    total += scratch[s]
                local = _scan_scaled(random_standard_uniform(rngs[r]), scratch, total, count)
                i = member_idx[member_ptr[r] + local]
            pos[r] = i
            clock[r] = _proc_draw(proc_kind[i], proc_param[i], rngs[r])

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
            z = random_standard_normal(rngs[r])
            if anomalous:
                y = u_mu1[i] + u_s1[i] * z
            else:
                y = u_mu0[i] + u_s0[i] * z
            dy0 = y - u_mu0[i]
            dy1 = y - u_mu1[i]
            llr = u_c[i] + u_a0[i] * dy0 * dy0 - u_a1[i] * dy1 * dy1
            trial.count_event(t, owner, <int>r)
            value = lam[i] + llr
            if value < 0.0:
                value = 0.0
            if value > eta:
                trial.crossing(i, t, -1)
                value = 0.0
            lam[i] = value
            if record is not None:
                record.append((t, i, llr, value, r))
            if stop_when_done and trial.pending == 0:
                end_time = t
                break
            if kind == 0:
                j = _scan_row(random_standard_uniform(rngs[r]), qs, r, n)
            else:
                total = 0.0
                count = member_ptr[r + 1] - member_ptr[r]
                for s in range(count):
                    k = member_idx[member_ptr[r] + s]
                    p1 = 1.0 / (1.0 + exp(-lam[k]))
                    scratch[s] = sqrt(p1 / div[k])
                    total += scratch[s]
                local = _scan_scaled(random_standard_uniform(rngs[r]), scratch, total, count)
                j = member_idx[member_ptr[r] + local]
            clock[r] = t + travel[i, j] + _proc_draw(proc_kind[j], proc_param[j], rngs[r])
            pos[r] = j
        return trial.result(end_time)
    finally:
        free(rngs)


def run_glr_single(low, policy, gen, record=None):
    """One single-vehicle trial with per-region GLR detectors."""
    cdef Py_ssize_t n = low.n
    kind_name = policy[0]
    cdef int kind = 0 if kind_name == "stationary" else 1
    cdef double[:, ::1] travel = low.travel
    cdef cnp.int32_t[::1] proc_kind = low.proc_kind
    cdef double[::1] proc_param = low.proc_param
    cdef double eta = low.eta
    cdef double horizon = low.horizon
    cdef double[::1] div = low.divergences
    cdef Py_ssize_t d = low.d
    cdef double[:, ::1] g_mu0 = low.g_mu0
    cdef double[:, :, ::1] g_L0 = low.g_L0
    cdef double[:, :, ::1] g_A0 = low.g_A0
    cdef double[::1] g_logdet0 = low.g_logdet0
    cdef cnp.int32_t[::1] hyp_ptr = low.hyp_ptr
    cdef double[:, ::1] hyp_mu = low.hyp_mu
    cdef double[:, :, ::1] hyp_L = low.hyp_L
    cdef double[:, :, ::1] hyp_A = low.hyp_A
    cdef double[::1] hyp_logdet = low.hyp_logdet
    cdef cnp.int32_t[::1] true_hyp = low.true_hyp
    cdef bitgen_t *rng = _bitgen(gen)

    cdef _Trial trial = _Trial(low)
    cdef bint stop_when_done = bool(low.stop_when_done) and trial.pending > 0
    lam_arr = np.zeros(n)
    scratch_arr = np.zeros(n)
    scores_arr = np.zeros(hyp_ptr[n])
    cdef double[::1] lam = lam_arr
    cdef double[::1] scratch = scratch_arr
    cdef double[::1] scores = scores_arr

    cdef double[::1] qvec
    if kind == 0:
        qvec = policy[1]

    cdef double total, p1, t, llr, quad0, prev, value, best, stat
    cdef Py_ssize_t i, j, k, h, gh, base, count, best_h, th
    cdef bint anomalous
    cdef double zbuf[64]
    cdef double ybuf[64]
    cdef double dybuf[64]

    if kind == 0:
        i = _scan(random_standard_uniform(rng), qvec, n)
    else:
        total = 0.0
        for k in range(n):
            p1 = 1.0 / (1.0 + exp(-lam[k]))
            scratch[k] = sqrt(p1 / div[k])
            total += scratch[k]
        i = _scan_scaled(random_standard_uniform(rng), scratch, total, n)
    t = _proc_draw(proc_kind[i], proc_param[i], rng)
    cdef double end_time = horizon

    while t <= horizon:
        anomalous = trial.anomalous(i, t)
        for k in range(d):
            zbuf[k] = random_standard_normal(rng)
        if anomalous:
            th = true_hyp[i]
            _mv_sample(hyp_mu, hyp_L, th, zbuf, ybuf, d)
        else:
            _mv_sample(g_mu0, g_L0, i, zbuf, ybuf, d)
        for k in range(d):
            dybuf[k] = ybuf[k] - g_mu0[i, k]
        quad0 = _mv_quad(g_A0, i, dybuf, d)
        base = hyp_ptr[i]
        count = hyp_ptr[i + 1] - base
        best = -INFINITY
        best_h = 0
        for h in range(count):
            gh = base + h
            for k in range(d):
                dybuf[k] = ybuf[k] - hyp_mu[gh, k]
            llr = 0.5 * (g_logdet0[i] - hyp_logdet[gh] + quad0 - _mv_quad(hyp_A, gh, dybuf, d))
            prev = scores[gh]
            if prev < 0.0:
                prev = 0.0
            value = prev + llr
            scores[gh] = value
            if value > best:
                best = value
                best_h = h
        stat = best if best > 0.0 else 0.0
        trial.count_event(t, None, 0)
        if stat > eta:
            trial.crossing(i, t, <int>best_h)
            for h in range(count):
                scores[base + h] = 0.0
            stat = 0.0
        lam[i] = stat
        if record is not None:
            record.append((t, i, stat))
        if stop_when_done and trial.pending == 0:
            end_time = t
            break
        if kind == 0:
            j = _scan(random_standard_uniform(rng), qvec, n)
        else:
            total = 0.0
            for k in range(n):
                p1 = 1.0 / (1.0 + exp(-lam[k]))
                scratch[k] = sqrt(p1 / div[k])
                total += scratch[k]
            j = _scan_scaled(random_standard_uniform(rng), scratch, total, n)
        t = t + travel[i, j] + _proc_draw(proc_kind[j], proc_param[j], rng)
        i = j
    return trial.result(end_time)


def mh_walk(transition, steps, start, gen):
    """Walk a routing chain and count visits (start state excluded)."""
    cdef double[:, ::1] rows = np.ascontiguousarray(transition, dtype=float)
    cdef Py_ssize_t n = rows.shape[0]
    counts_arr = np.zeros(n, dtype=np.int64)
    cdef cnp.int64_t[::1] counts = counts_arr
    cdef bitgen_t *rng = _bitgen(gen)
    cdef Py_ssize_t i = start
    cdef long long nsteps = steps
    cdef long long s
    for s in range(nsteps):
        i = _scan_row(random_standard_uniform(rng), rows, i, n)
        counts[i] += 1
    return counts_arr
