"""Quantitative signatures of the constructed flows: spiral exponents,
(absence of) streamline intersections, vorticity stratification across
turns, and the decay of the mode-inverse norms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, RangeError
from .fields import Polyline, SolutionState, base_fields, _omega_arrays
from .grids import PGrid
from .modes import FlowParams, estimate_norm


@dataclass(frozen=True)
class SpiralFit:
    exponent: float
    beta_window: tuple[float, float]
    residual: float  # rms of the log-log linear fit


def fit_spiral_exponent(
    line: Polyline, beta_window: tuple[float, float] = (10.0 * np.pi, 40.0 * np.pi)
) -> SpiralFit:
    """Least-squares slope of log r against log theta over the window.

    theta is the unrolled winding angle beta + u0 of the trace.
    """
    if line.beta.size < 16:
        raise DataError("spiral fit needs at least 16 samples")
    if line.beta.max() < 10.0 * line.beta.min():
        raise DataError("spiral fit needs the trace to span at least a decade in beta")
    lo, hi = beta_window
    sel = (line.beta >= lo) & (line.beta <= hi)
    if sel.sum() < 16:
        raise DataError("fit window contains fewer than 16 samples")
    theta = line.beta[sel] + line.u0
    r = np.hypot(line.xy[sel, 0], line.xy[sel, 1])
    x = np.log(theta)
    y = np.log(r)
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return SpiralFit(exponent=float(slope), beta_window=(lo, hi), residual=resid)


def synthetic_spiral(
    mu: float,
    alpha: float,
    delta: float,
    freq: float,
    beta_range: tuple[float, float],
    step: float = 0.02,
    u0: float = 0.0,
) -> Polyline:
    """Test curve r e^(i theta) = beta^(-mu) e^(i beta) (1 + delta beta^(-alpha) e^(i freq beta)).

    For non-integer frequency and slowly decaying amplitude the perturbed
    turns self-intersect once beta is large enough; integer frequencies keep
    the turns nested.
    """
    b0, b1 = beta_range
    betas = np.arange(b0, b1 + 0.5 * step, step)
    z = betas ** (-mu) * np.exp(1j * (betas + u0)) * (
        1.0 + delta * betas ** (-alpha) * np.exp(1j * freq * betas)
    )
    xy = np.stack([z.real, z.imag], axis=1)
    return Polyline(u0=u0, t=None, beta=betas, xy=xy, vort=np.zeros_like(betas))


@dataclass(frozen=True)
class IntersectionHit:
    line_a: int
    seg_a: int
    line_b: int
    seg_b: int
    point: tuple[float, float]


@dataclass(frozen=True)
class IntersectionReport:
    hits: tuple[IntersectionHit, ...]
    tol: float

    @property
    def clean(self) -> bool:
        return not self.hits


def _segment_distance_batch(p1, p2, q1, q2):
    """Min distance between segment batches (vectorized, same length)."""
    d1 = p2 - p1
    d2 = q2 - q1
    r = p1 - q1
    a = np.einsum("ij,ij->i", d1, d1)
    e = np.einsum("ij,ij->i", d2, d2)
    f = np.einsum("ij,ij->i", d2, r)
    c = np.einsum("ij,ij->i", d1, r)
    b = np.einsum("ij,ij->i", d1, d2)
    denom = a * e - b * b
    s = np.where(denom > 1e-30, np.clip((b * f - c * e) / np.where(denom > 1e-30, denom, 1.0), 0, 1), 0.0)
    t = np.where(e > 1e-30, np.clip((b * s + f) / np.where(e > 1e-30, e, 1.0), 0, 1), 0.0)
    # recompute s against clamped t
    s = np.where(a > 1e-30, np.clip((b * t - c) / np.where(a > 1e-30, a, 1.0), 0, 1), 0.0)
    closest1 = p1 + s[:, None] * d1
    closest2 = q1 + t[:, None] * d2
    diff = closest1 - closest2
    return np.sqrt(np.einsum("ij,ij->i", diff, diff)), 0.5 * (closest1 + closest2)


def detect_intersections(
    polylines: list[Polyline], tol_x: float | None = None, block: int = 4096
) -> IntersectionReport:
    """Segment-pair sweep for self- and mutual intersections.

    Pairs closer than tol_x count as intersections; adjacent segments of the
    same polyline are excluded.  Symmetric in the polyline order.
    """
    if not polylines:
        raise DataError("need at least one polyline")
    starts, ends, line_id, seg_id = [], [], [], []
    diam = 0.0
    for k, pl in enumerate(polylines):
        if pl.xy.shape[0] < 2:
            continue
        starts.append(pl.xy[:-1])
        ends.append(pl.xy[1:])
        line_id.append(np.full(pl.xy.shape[0] - 1, k))
        seg_id.append(np.arange(pl.xy.shape[0] - 1))
        span = pl.xy.max(axis=0) - pl.xy.min(axis=0)
        diam = max(diam, float(np.hypot(*span)))
    if not starts:
        return IntersectionReport((), 0.0)
    P1 = np.concatenate(starts)
    P2 = np.concatenate(ends)
    L = np.concatenate(line_id)
    S = np.concatenate(seg_id)
    tol = tol_x if tol_x is not None else 1e-9 * diam

    lo = np.minimum(P1, P2) - tol
    hi = np.maximum(P1, P2) + tol
    n = P1.shape[0]
    hits: list[IntersectionHit] = []
    for i0 in range(0, n, block):
        i1 = min(i0 + block, n)
        for j0 in range(i0, n, block):
            j1 = min(j0 + block, n)
            overlap = (
                (lo[i0:i1, None, 0] <= hi[None, j0:j1, 0])
                & (lo[None, j0:j1, 0] <= hi[i0:i1, None, 0])
                & (lo[i0:i1, None, 1] <= hi[None, j0:j1, 1])
                & (lo[None, j0:j1, 1] <= hi[i0:i1, None, 1])
            )
            ii, jj = np.nonzero(overlap)
            ii = ii + i0
            jj = jj + j0
            keep = ii < jj
            same = L[ii] == L[jj]
            adjacent = same & (np.abs(S[ii] - S[jj]) <= 1)
            keep &= ~adjacent
            ii, jj = ii[keep], jj[keep]
            if ii.size == 0:
                continue
            dist, mid = _segment_distance_batch(P1[ii], P2[ii], P1[jj], P2[jj])
            close = dist <= tol
            for a, b, pt in zip(ii[close], jj[close], mid[close]):
                hits.append(
                    IntersectionHit(
                        int(L[a]), int(S[a]), int(L[b]), int(S[b]),
                        (float(pt[0]), float(pt[1])),
                    )
                )
    hits.sort(key=lambda h: (h.line_a, h.seg_a, h.line_b, h.seg_b))
    return IntersectionReport(tuple(hits), tol)


def stratification_ratio(
    state: SolutionState,
    theta: float,
    beta_list,
    samples: int = 64,
) -> list[tuple[float, float]]:
    """Oscillation of the vorticity invariant across one radial crossing.

    For each beta, phi sweeps one period along fixed theta (crossing every
    spiral turn once); the ratio is osc(h) / sup|h| on that segment, with
    h = Omega qv rad^(1/mu) the t-free vorticity invariant.  On the
    background h is constant and the ratio vanishes; for non-constant data
    it stays uniformly positive toward the spiral center.  The series is
    truncated at the first beta whose segment leaves the valid chart.
    """
    out: list[tuple[float, float]] = []
    mu = state.params.mu
    for beta in beta_list:
        if beta - 2.0 * np.pi <= 0.0:
            break
        phi0 = theta - beta
        phis = phi0 + 2.0 * np.pi * np.arange(samples) / samples
        betas = theta - phis
        try:
            f = base_fields(state, betas, phis, paired=True)
            rad = np.sqrt(-f["b"] / mu)
            qv = f["U1"] ** (-1.0 / (2.0 * mu))
        except Exception:
            break
        if (f["b"] >= 0).any() or (f["U1"] <= 0).any():
            break
        om, _ = _omega_arrays(state, phis)
        h = om * qv * rad ** (1.0 / mu)
        osc = float(h.max() - h.min())
        sup = float(np.abs(h).max())
        out.append((float(beta), osc / sup if sup > 0 else 0.0))
    return out


@dataclass(frozen=True)
class DecayRow:
    n: int
    l_inv: float
    pl_inv: float
    ql_inv: float
    qql_inv: float


@dataclass(frozen=True)
class DecayReport:
    rows: tuple[DecayRow, ...]
    flagged: tuple[str, ...]

    def sequences(self) -> dict[str, list[float]]:
        return {
            "L_inv*<n>^2": [r.l_inv * (1 + r.n**2) for r in self.rows],
            "PL_inv*<n>^2": [r.pl_inv * (1 + r.n**2) for r in self.rows],
            "QL_inv*<n>": [r.ql_inv * np.sqrt(1 + r.n**2) for r in self.rows],
            "QQL_inv": [r.qql_inv for r in self.rows],
        }


def decay_report(
    params: FlowParams, n_list, grid: PGrid | None = None, growth_limit: float = 1.2
) -> DecayReport:
    """Probe-estimated inverse norms scaled by their expected decay rates.

    A sequence is flagged when it grows by more than growth_limit relative
    to its first entry; boundedness of the scaled sequences is the numerical
    counterpart of the asymptotic operator estimates.
    """
    g = grid or PGrid()
    rows = []
    for n in n_list:
        rows.append(
            DecayRow(
                n=int(n),
                l_inv=estimate_norm("L_inv", params, n, grid=g),
                pl_inv=estimate_norm("P_L_inv", params, n, grid=g),
                ql_inv=estimate_norm("Q_L_inv", params, n, grid=g),
                qql_inv=estimate_norm("QQ_L_inv", params, n, grid=g),
            )
        )
    report = DecayReport(tuple(rows), ())
    flagged = []
    if rows:
        for name, seq in report.sequences().items():
            if max(seq) > growth_limit * seq[0]:
                flagged.append(name)
    return DecayReport(tuple(rows), tuple(flagged))
