"""Pure-Python reference kernels.

Same signatures and operation order as ``_kernels.pyx`` so both backends agree
to the last bit on common libm builds. Used when the compiled extension is not
built or ``LAENET_PURE_PYTHON=1``.
"""
import math

import numpy as np

_LOG2_OVERFLOW = 1023.0


def link_state(uav, users, a_los, b_los, gamma_los, gamma_nlos, beta0,
               fading, power, bandwidth, noise_w):
    """Per-user power gain |h|^2 and rate (bit/s) for one UAV pose."""
    n = len(users)
    gain = np.empty(n)
    rate = np.empty(n)
    ux, uy, uz = float(uav[0]), float(uav[1]), float(uav[2])
    pts = np.asarray(users, dtype=float).tolist()
    fading, power, bandwidth = (np.asarray(v, dtype=float).tolist() for v in (fading, power, bandwidth))
    for i in range(n):
        dx = ux - pts[i][0]
        dy = uy - pts[i][1]
        dz = uz - pts[i][2]
        horiz = math.sqrt(dx * dx + dy * dy)
        dist = math.sqrt(horiz * horiz + dz * dz)
        if dist == 0.0:
            raise ValueError("co-located link: distance is zero")
        elev = math.degrees(math.atan2(dz, horiz))
        p = 1.0 / (1.0 + a_los * math.exp(-b_los * (elev - a_los)))
        mean = p * beta0 / dist ** gamma_los + (1.0 - p) * beta0 / dist ** gamma_nlos
        g = mean * fading[i]
        gain[i] = g
        rate[i] = bandwidth[i] * math.log2(1.0 + power[i] * g / noise_w)
    return gain, rate


def upload(payload, rates, slot_len):
    """Slot-wise upload; returns (completion_slot (1-based, 0 if incomplete), time, bits left)."""
    if payload <= 0.0:
        return 1, 0.0, 0.0
    sent = 0.0
    for t in range(len(rates)):
        cap = slot_len * rates[t]
        if sent + cap >= payload:
            return t + 1, slot_len * t + (payload - sent) / rates[t], 0.0
        sent += cap
    return 0, slot_len * len(rates), payload - sent


def gae(rewards, values, dones, gamma, lam, last_value=0.0):
    n = len(rewards)
    adv = np.empty(n)
    acc = 0.0
    for t in range(n - 1, -1, -1):
        nonterm = 1.0 - dones[t]
        nxt = last_value if t == n - 1 else values[t + 1]
        delta = rewards[t] + gamma * nxt * nonterm - values[t]
        acc = delta + gamma * lam * nonterm * acc
        adv[t] = acc
    return adv, adv + np.asarray(values, dtype=float)


def _power_for_tau(tau, d, b, h, gam, noise):
    expo = d / (b * (tau - gam))
    if expo > _LOG2_OVERFLOW:
        return math.inf
    return noise / h * (2.0 ** expo - 1.0)


def _g(p, d, b, h, noise):
    if math.isinf(p):
        return 0.0
    x = h * p / noise
    l2 = math.log2(1.0 + x)
    return d * h / (b * noise * (1.0 + x) * math.log(2.0) * l2 * l2)


def kkt_residual(tau, zeta, payload, bandwidth, gain, gamma, noise_w):
    """sum_n zeta / g_n(P_n(tau)) - 1."""
    s = 0.0
    for i in range(len(payload)):
        if payload[i] == 0.0:
            continue
        p = _power_for_tau(tau, payload[i], bandwidth[i], gain[i], gamma[i], noise_w)
        g = _g(p, payload[i], bandwidth[i], gain[i], noise_w)
        if g == 0.0:
            return math.inf
        s += zeta / g
    return s - 1.0


def tau_bisect(zeta, payload, bandwidth, gain, gamma, noise_w, eps_lo, tol, max_doublings=200):
    """Root of the KKT residual in tau; returns (tau, initial lo, initial hi, iterations)."""
    lo = max(gamma) + eps_lo
    width = 1.0
    hi = lo + width
    k = 0
    while kkt_residual(hi, zeta, payload, bandwidth, gain, gamma, noise_w) > 0.0:
        width *= 2.0
        hi = lo + width
        k += 1
        if k > max_doublings:
            raise RuntimeError("tau bracket did not close")
    if kkt_residual(lo, zeta, payload, bandwidth, gain, gamma, noise_w) <= 0.0:
        return lo, lo, lo, 0
    lo0 = lo
    hi0 = hi
    it = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if kkt_residual(mid, zeta, payload, bandwidth, gain, gamma, noise_w) > 0.0:
            lo = mid
        else:
            hi = mid
        it += 1
    return 0.5 * (lo + hi), lo0, hi0, it
