# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; mirror ``_kernels_py`` operation for operation."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, atan2, exp, pow, log2, log, isinf, INFINITY, M_PI

cnp.import_array()

cdef double _LOG2_OVERFLOW = 1023.0
cdef double _RAD2DEG = 180.0 / M_PI


def link_state(uav, users, double a_los, double b_los, double gamma_los, double gamma_nlos,
               double beta0, fading, power, bandwidth, double noise_w):
    cdef double[:, ::1] pts = np.ascontiguousarray(users, dtype=np.float64)
    cdef double[::1] fad = np.ascontiguousarray(fading, dtype=np.float64)
    cdef double[::1] pw = np.ascontiguousarray(power, dtype=np.float64)
    cdef double[::1] bw = np.ascontiguousarray(bandwidth, dtype=np.float64)
    cdef Py_ssize_t n = pts.shape[0], i
    gain_arr = np.empty(n)
    rate_arr = np.empty(n)
    cdef double[::1] gain = gain_arr
    cdef double[::1] rate = rate_arr
    cdef double ux = uav[0], uy = uav[1], uz = uav[2]
    cdef double dx, dy, dz, horiz, dist, elev, p, mean, g
    for i in range(n):
        dx = ux - pts[i, 0]
        dy = uy - pts[i, 1]
        dz = uz - pts[i, 2]
        horiz = sqrt(dx * dx + dy * dy)
        dist = sqrt(horiz * horiz + dz * dz)
        if dist == 0.0:
            raise ValueError("co-located link: distance is zero")
        elev = atan2(dz, horiz) * _RAD2DEG
        p = 1.0 / (1.0 + a_los * exp(-b_los * (elev - a_los)))
        mean = p * beta0 / pow(dist, gamma_los) + (1.0 - p) * beta0 / pow(dist, gamma_nlos)
        g = mean * fad[i]
        gain[i] = g
        rate[i] = bw[i] * log2(1.0 + pw[i] * g / noise_w)
    return gain_arr, rate_arr


def upload(double payload, rates, double slot_len):
    cdef double[::1] r = np.ascontiguousarray(rates, dtype=np.float64)
    cdef Py_ssize_t t, n = r.shape[0]
    cdef double sent = 0.0, cap
    if payload <= 0.0:
        return 1, 0.0, 0.0
    for t in range(n):
        cap = slot_len * r[t]
        if sent + cap >= payload:
            return t + 1, slot_len * t + (payload - sent) / r[t], 0.0
        sent += cap
    return 0, slot_len * n, payload - sent


def gae(rewards, values, dones, double gamma, double lam, double last_value=0.0):
    cdef double[::1] rw = np.ascontiguousarray(rewards, dtype=np.float64)
    cdef double[::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef double[::1] dn = np.ascontiguousarray(dones, dtype=np.float64)
    cdef Py_ssize_t n = rw.shape[0], t
    adv_arr = np.empty(n)
    cdef double[::1] adv = adv_arr
    cdef double acc = 0.0, nonterm, nxt, delta
    for t in range(n - 1, -1, -1):
        nonterm = 1.0 - dn[t]
        nxt = last_value if t == n - 1 else v[t + 1]
        delta = rw[t] + gamma * nxt * nonterm - v[t]
        acc = delta + gamma * lam * nonterm * acc
        adv[t] = acc
    return adv_arr, adv_arr + np.asarray(values, dtype=np.float64)


cdef inline double _power_for_tau(double tau, double d, double b, double h, double gam,
                                  double noise) nogil:
    cdef double expo = d / (b * (tau - gam))
    if expo > _LOG2_OVERFLOW:
        return INFINITY
    return noise / h * (pow(2.0, expo) - 1.0)


cdef inline double _g(double p, double d, double b, double h, double noise) nogil:
    cdef double x, l2
    if isinf(p):
        return 0.0
    x = h * p / noise
    l2 = log2(1.0 + x)
    return d * h / (b * noise * (1.0 + x) * log(2.0) * l2 * l2)


cdef double _residual(double tau, double zeta, double[::1] d, double[::1] b, double[::1] h,
                      double[::1] gam, double noise):
    cdef double s = 0.0, p, g
    cdef Py_ssize_t i
    for i in range(d.shape[0]):
        if d[i] == 0.0:
            continue
        p = _power_for_tau(tau, d[i], b[i], h[i], gam[i], noise)
        g = _g(p, d[i], b[i], h[i], noise)
        if g == 0.0:
            return INFINITY
        s += zeta / g
    return s - 1.0


def kkt_residual(double tau, double zeta, payload, bandwidth, gain, gamma, double noise_w):
    return _residual(tau, zeta,
                     np.ascontiguousarray(payload, dtype=np.float64),
                     np.ascontiguousarray(bandwidth, dtype=np.float64),
                     np.ascontiguousarray(gain, dtype=np.float64),
                     np.ascontiguousarray(gamma, dtype=np.float64), noise_w)


def tau_bisect(double zeta, payload, bandwidth, gain, gamma, double noise_w, double eps_lo,
               double tol, int max_doublings=200):
    cdef double[::1] d = np.ascontiguousarray(payload, dtype=np.float64)
    cdef double[::1] b = np.ascontiguousarray(bandwidth, dtype=np.float64)
    cdef double[::1] h = np.ascontiguousarray(gain, dtype=np.float64)
    cdef double[::1] gm = np.ascontiguousarray(gamma, dtype=np.float64)
    cdef double lo = max(gamma) + eps_lo, width = 1.0, hi, mid, lo0, hi0
    cdef int k = 0, it = 0
    hi = lo + width
    while _residual(hi, zeta, d, b, h, gm, noise_w) > 0.0:
        width *= 2.0
        hi = lo + width
        k += 1
        if k > max_doublings:
            raise RuntimeError("tau bracket did not close")
    if _residual(lo, zeta, d, b, h, gm, noise_w) <= 0.0:
        return lo, lo, lo, 0
    lo0 = lo
    hi0 = hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _residual(mid, zeta, d, b, h, gm, noise_w) > 0.0:
            lo = mid
        else:
            hi = mid
        it += 1
    return 0.5 * (lo + hi), lo0, hi0, it
