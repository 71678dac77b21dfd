"""Spot checks of the special functions against scipy references.

Used by ``nomalf validate-specfun``; every row carries its own tolerance.
"""
import math
import warnings

from scipy import integrate, special as sps

from .errors import LossOfPrecisionWarning
from .specfun import exp_int_ei, exp_int_en, hyp2f1_neg, psi_integral, theta, theta_quadrature


def _psi_quad(n, u, v):
    f = lambda x: x ** n * sps.expi(-x) * math.exp(x) if x < 700 else -x ** n / x * (1 - 1 / x + 2 / x ** 2)
    val, _ = integrate.quad(f, u, v, epsabs=1e-13, epsrel=1e-12, limit=400)
    return val


def _row(name, args, value, ref, tol, absolute=0.0):
    err = abs(value - ref) / max(abs(ref), 1e-300)
    ok = abs(value - ref) <= max(tol * abs(ref), absolute)
    return {"function": name, "args": args, "value": value, "reference": ref, "rel_error": err,
            "tolerance": tol, "pass": ok}


def specfun_report():
    rows = []
    for x in (-700.0, -50.0, -3.0, -1.0, -1e-8, 1e-8, 0.5, 1.0, 6.0, 40.0, 300.0, 700.0):
        rows.append(_row("Ei", f"x={x:g}", exp_int_ei(x), float(sps.expi(x)), 1e-12))
    for q in (1, 2, 5, 12):
        for x in (1e-3, 0.5, 1.0, 10.0, 50.0):
            rows.append(_row("E_q", f"q={q},x={x:g}", exp_int_en(q, x), float(sps.expn(q, x)), 1e-10))
    for s, p, z in ((1, 1, -1.0), (2, 3, -0.7), (-3, 2.5, -20.0), (1.5, 4, -3.0), (4, 1, -250.0)):
        rows.append(_row("2F1", f"s={s},p={p},z={z:g}", hyp2f1_neg(s, p, z),
                         float(sps.hyp2f1(s, p, p + 1, z)), 1e-10))
    for n, u, v in ((2, 0.5, 3.0), (0, 1.0, 2.0), (-1, 0.2, 4.0), (-3, 2.0, math.inf), (-6, 0.1, 5.0)):
        res = psi_integral(n, u, v)
        rows.append(_row("Psi", f"n={n},u={u:g},v={v:g}", res.value, _psi_quad(n, u, v), 1e-6, 1e-8))
    for M in (2, 4, 6):
        for a, b in ((0.1, 1.0), (1.0, 1.0), (10.0, 0.1)):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", LossOfPrecisionWarning)
                c = theta(a, b, M)
            q = theta_quadrature(a, b, M, nodes=40)
            rows.append(_row("Theta", f"M={M},a={a:g},b={b:g},{c.method}", c.value, q.value, 1e-8))
    return rows, all(r["pass"] for r in rows)
