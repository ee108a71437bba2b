"""Polynomial weight rules for pointwise evaluation of scaled derivatives.

A mode contribution is  f(beta, u) = m_hat-integral of e^(i p beta) e^(i n u).
Multiplying the integrand by polynomials in x := i p beta and y := i n beta
realizes the angular operators exactly, with no differentiation of the
sampled density:

    beta d/dbeta  (D_b):  W -> Euler(W) + x W
    beta d/dU     (D_U):  W -> -Euler(W) + (y - x) W
    d/du               :  W -> (i n) W

where Euler(W) = x dW/dx + y dW/dy (both x and y are linear in beta).  The
scaled operators are dtb = D_b + (1 - 2 mu) and dtU = D_U + (2 mu - 1).

Weights are kept as {(i, j): coefficient} monomial tables in (x, y) and
lowered to the eval_at_beta weight format (coef, p_power, beta_power) via
x^i y^j = (i p beta)^i (i n beta)^j.
"""

from __future__ import annotations

Poly = dict[tuple[int, int], complex]


def _add(a: Poly, b: Poly, scale: complex = 1.0) -> Poly:
    out = dict(a)
    for k, v in b.items():
        out[k] = out.get(k, 0.0) + scale * v
    return {k: v for k, v in out.items() if v != 0.0}


def _scal(a: Poly, c: complex) -> Poly:
    return {k: c * v for k, v in a.items() if c * v != 0.0}


def _shift_x(a: Poly) -> Poly:
    """multiply by x"""
    return {(i + 1, j): v for (i, j), v in a.items()}


def _shift_y(a: Poly) -> Poly:
    return {(i, j + 1): v for (i, j), v in a.items()}


def _euler(a: Poly) -> Poly:
    return {k: (k[0] + k[1]) * v for k, v in a.items() if (k[0] + k[1]) * v != 0.0}


ONE: Poly = {(0, 0): 1.0}


def op_dtb(a: Poly, mu: float) -> Poly:
    """scaled beta derivative: Euler + x + (1 - 2 mu)"""
    return _add(_add(_euler(a), _shift_x(a)), a, 1.0 - 2.0 * mu)


def op_dtU(a: Poly, mu: float) -> Poly:
    """scaled U derivative: -Euler + (y - x) + (2 mu - 1)"""
    out = _add(_scal(_euler(a), -1.0), _shift_y(a))
    out = _add(out, _shift_x(a), -1.0)
    return _add(out, a, 2.0 * mu - 1.0)


def op_DU(a: Poly) -> Poly:
    """pure derivation beta d/dU: -Euler + (y - x)"""
    out = _add(_scal(_euler(a), -1.0), _shift_y(a))
    return _add(out, _shift_x(a), -1.0)


def base_field_weights(mu: float) -> dict[str, tuple[Poly, int]]:
    """Monomial tables for every base field; the int is the power of (i n)
    to apply as a flat factor (the d/du count)."""
    b = op_dtb(ONE, mu)
    U1 = op_dtU(ONE, mu)
    d = _add(op_dtU(b, mu), b)          # (dtU + 1) dtb
    return {
        "psi": (ONE, 0),
        "b": (b, 0),
        "U1": (U1, 0),
        "u1": (ONE, 1),
        "d": (d, 0),
        "ub": (b, 1),
        "DUb": (op_DU(b), 0),
        "DUU1": (op_DU(U1), 0),
        "DUu1": (op_DU(ONE), 1),
        "DUd": (op_DU(d), 0),
        "DUub": (op_DU(b), 1),
        "dU1": (U1, 1),
        "du1": (ONE, 2),
        "dd": (d, 1),
        "dub": (b, 2),
    }


def to_weight_rule(poly: Poly, n: int, inu_power: int = 0):
    """Lower a monomial table to eval_at_beta's (coef, p_pow, beta_pow) form.

    x^i y^j = (1j p beta)^i (1j n beta)^j; the flat (i n)^k du factor
    multiplies every term.
    """
    flat = (1j * n) ** inu_power
    rule = []
    for (i, j), c in poly.items():
        coef = c * flat * (1j ** (i + j)) * (float(n) ** j)
        if coef != 0.0:
            rule.append((coef, i, i + j))
    if not rule:
        rule = [(0.0, 0, 0)]
    return rule


def linear_weight_rule(mu: float, n: int):
    """Weight rule for the full linearized operator
    (-dtU^2 - mu^2 (d/du)^2)(dtb + 2 mu) - (2 mu - 1)(dtU + dtb)."""
    inner = _add(op_dtb(ONE, mu), ONE, 2.0 * mu)
    main = _scal(op_dtU(op_dtU(inner, mu), mu), -1.0)
    main = _add(main, _add(op_dtU(ONE, mu), op_dtb(ONE, mu)), -(2.0 * mu - 1.0))
    rule = to_weight_rule(main, n, 0)
    rule += [(-(mu**2) * c, a, b) for (c, a, b) in to_weight_rule(inner, n, 2)]
    return rule
