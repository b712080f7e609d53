"""Independent reference computations used by several test modules."""

import numpy as np

from scaleinv.kinetics import Circuit


def c_rate(c: Circuit, xa, xb, xc):
    """dx_C/dt summed term by term in plain numpy."""
    xa, xb, xc = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (xa, xb, xc)))
    rate = np.zeros(xa.shape)
    states = {"A": xa, "B": xb, "C": xc}
    for t in c.terms_on("C"):
        mod = states[t.modulator] if t.modulator in states else c.constitutive[t.modulator]
        sub = 1.0 - xc if t.sign > 0 else xc
        rate = rate + t.sign * t.k * mod * sub / (sub + t.K)
    return rate


def bisect_qss(c: Circuit, xa, xb, iterations: int = 80):
    """Root of dx_C/dt = 0 in [0, 1] by plain bisection, vectorised."""
    xa, xb = np.broadcast_arrays(np.asarray(xa, dtype=float), np.asarray(xb, dtype=float))
    lo = np.zeros(xa.shape)
    hi = np.ones(xa.shape)
    f_lo = c_rate(c, xa, xb, lo)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        f_mid = c_rate(c, xa, xb, mid)
        same = np.sign(f_mid) == np.sign(f_lo)
        lo = np.where(same, mid, lo)
        f_lo = np.where(same, f_mid, f_lo)
        hi = np.where(same, hi, mid)
    return 0.5 * (lo + hi)
