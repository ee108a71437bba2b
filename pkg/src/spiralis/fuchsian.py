"""First-order operators with a regular singular point, A = (p - z) d/dp - s,
acting on atoms-plus-density measures, and their explicit inverses.

The inverse is the one-sided integral

    u(p) = sgn(p - z) |p - z|^s  int_L^{p-z} |xi - z|^(-s-1) f(xi) d(xi - z)

with the lower limit L on the z side (distance 0) when s + 1 < 0 and at
sgn(p - z) * infinity when s + 1 > 0; this is the unique choice for which the
kernel stays bounded over the integration range.  An atom sitting exactly at
z is an eigenvector: A maps w*delta_z to -(s+1) w*delta_z.  An atom at
xi != z inverts to the one-sided power density

    + w |p-z|^s |xi-z|^(-s-1)  on {same side as xi, |p-z| >= |xi-z|}   (s < -1)
    - w |p-z|^s |xi-z|^(-s-1)  on {same side as xi, |p-z| <= |xi-z|}   (s > -1)

Quadrature against the sampled density is exact per cell for the
piecewise-linear interpolant times the power kernel (plain trapezoid would be
badly wrong near the singular boundary); the only truncation is the power
tail outside the grid, whose mass is estimated and reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PathologicalExponentError, UnsupportedInputError
from .grids import PGrid
from .measures import SpectralMeasure

_S_PATHOLOGICAL_TOL = 1e-12
_ATOM_AT_Z_TOL = 1e-9


@dataclass(frozen=True)
class FuchsianParams:
    z: float
    s: float

    def __post_init__(self):
        if abs(self.s + 1.0) <= _S_PATHOLOGICAL_TOL:
            raise PathologicalExponentError(
                f"exponent s = {self.s} is pathological (s = -1 has no bounded inverse)"
            )


@dataclass(frozen=True)
class InvertReport:
    """Mass of the result lost to truncation at the grid edge."""

    truncated_mass: float = 0.0


def _at_z(xi: float, z: float) -> bool:
    return abs(xi - z) <= _ATOM_AT_Z_TOL * max(1.0, abs(z))


def apply_forward(fp: FuchsianParams, m: SpectralMeasure) -> SpectralMeasure:
    """(p - z) d/dp - s, with centered differences on the density part.

    Valid for smooth densities; an atom located away from z is rejected since
    its image would be a dipole, which is not a measure.
    """
    z, s = fp.z, fp.s
    atoms = []
    for xi, w in m.atoms:
        if not _at_z(xi, z):
            raise UnsupportedInputError(
                f"forward application to atom at {xi} != z = {z} creates a dipole"
            )
        atoms.append((xi, -(s + 1.0) * w))

    d = m.density
    h = m.grid.h_p
    dp = np.empty_like(d)
    dp[1:-1] = (d[2:] - d[:-2]) / (2.0 * h)
    dp[0] = (-3.0 * d[0] + 4.0 * d[1] - d[2]) / (2.0 * h)
    dp[-1] = (3.0 * d[-1] - 4.0 * d[-2] + d[-3]) / (2.0 * h)
    out = (m.grid.nodes - z) * dp - s * d
    return SpectralMeasure(m.grid, tuple(atoms), out)


def _power_integrals(w: float, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """int_a^b tau^w dtau, elementwise, for 0 <= a <= b."""
    if abs(w + 1.0) < 1e-13:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(b / a)
    e = w + 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        return (b**e - a**e) / e


def _invert_density(z: float, s: float, m: SpectralMeasure):
    """Nodewise values of the inverted density, plus truncated tail mass."""
    grid = m.grid
    p = grid.nodes
    f = m.density
    from_zero = s + 1.0 < 0.0
    w = -s - 1.0
    out = np.zeros(grid.size, dtype=np.complex128)
    tail = 0.0

    zi = grid.index_of(z)
    f_at_z = None
    if -grid.p_max <= z <= grid.p_max:
        f_at_z = complex(np.interp(z, p, f.real) + 1j * np.interp(z, p, f.imag))

    for side in (+1.0, -1.0):
        mask = side * (p - z) > _ATOM_AT_Z_TOL * max(1.0, abs(z))
        idx = np.nonzero(mask)[0]
        if idx.size == 0:
            continue
        order = idx if side > 0 else idx[::-1]
        tau_nodes = side * (p[order] - z)
        fv = f[order]
        # include the point at z itself when it falls inside the grid, so the
        # partial segment between z and the first node is integrated too
        if f_at_z is not None and tau_nodes[0] > 1e-14:
            tau_bp = np.concatenate(([0.0], tau_nodes))
            fv_bp = np.concatenate(([f_at_z], fv))
            node_off = 1
        else:
            tau_bp = tau_nodes
            fv_bp = fv
            node_off = 0

        if tau_bp.size < 2:
            ivals = np.zeros(tau_nodes.size, dtype=np.complex128)
        else:
            ta, tb = tau_bp[:-1], tau_bp[1:]
            slope = (fv_bp[1:] - fv_bp[:-1]) / (tb - ta)
            lin_a = fv_bp[:-1] - slope * ta
            with np.errstate(all="ignore"):
                cells = lin_a * _power_integrals(w, ta, tb) + slope * _power_integrals(
                    w + 1.0, ta, tb
                )
            if not from_zero and node_off == 1:
                cells[0] = 0.0  # singular cell at tau = 0 is never integrated over
            if from_zero:
                csum = np.concatenate(([0.0], np.cumsum(cells)))
                ivals = csum[node_off:]
            else:
                rsum = np.concatenate((np.cumsum(cells[::-1])[::-1], [0.0]))
                ivals = -rsum[node_off:]
        out[order] = tau_nodes**s * ivals

        if from_zero and tau_nodes.size:
            # result decays like tau^s beyond the grid edge
            tail += abs(ivals[-1]) * tau_nodes[-1] ** (s + 1.0) / abs(s + 1.0)

    if zi is not None:
        left = out[zi - 1] if zi > 0 else None
        right = out[zi + 1] if zi < grid.size - 1 else None
        nbrs = [v for v in (left, right) if v is not None]
        avg = sum(nbrs) / len(nbrs) if nbrs else 0.0
        if s > 1e-13 or s < -1.0:
            out[zi] = -f_at_z / s
        elif abs(s) <= 1e-13:
            out[zi] = avg
        else:
            # integrable |p-z|^s singularity: node value chosen so the hat
            # carries the local mass of the power profile
            out[zi] = avg * (1.0 - s) / (1.0 + s)
    return out, tail


def _invert_atom(z: float, s: float, xi: float, wgt: complex, grid: PGrid):
    """Power density from an atom at xi != z, sampled on the grid."""
    p = grid.nodes
    h = grid.h_p
    side = 1.0 if xi > z else -1.0
    dist = abs(xi - z)
    scale = wgt * dist ** (-s - 1.0)
    tau = side * (p - z)
    out = np.zeros(grid.size, dtype=np.complex128)
    tail = 0.0

    if s < -1.0:
        sup = tau >= dist * (1.0 - 1e-12)
        out[sup] = scale * tau[sup] ** s
        edge = abs(side * grid.p_max - z)
        if edge > dist:
            tail = abs(scale) * edge ** (s + 1.0) / abs(s + 1.0)
        else:
            tail = abs(wgt) / abs(s + 1.0)  # support entirely off-grid
    else:
        sup = (tau > 1e-14) & (tau <= dist * (1.0 + 1e-12))
        out[sup] = -scale * tau[sup] ** s
        if abs(z) > grid.p_max:
            # part of the segment between z and xi falls outside the grid
            off = abs(z) - grid.p_max
            tail = abs(scale) * min(off, dist) ** (s + 1.0) / (s + 1.0)
        zi = grid.index_of(z)
        if zi is not None:
            if s > 1e-13:
                out[zi] = 0.0
            else:
                # jump (s = 0) or integrable singularity: hat carries the
                # exact one-sided mass of the adjacent half cell
                out[zi] = -scale * h**s * (1.0 / (s + 1.0) - 0.5)

    ji = grid.index_of(xi)
    if ji is not None:
        out[ji] *= 0.5  # jump edge: midpoint convention
    return out, tail


def invert_detailed(fp: FuchsianParams, m: SpectralMeasure):
    """Inverse with a truncation report."""
    z, s = fp.z, fp.s
    atoms_out = []
    dens = np.zeros(m.grid.size, dtype=np.complex128)
    tail = 0.0
    for xi, wgt in m.atoms:
        if _at_z(xi, z):
            atoms_out.append((xi, -wgt / (s + 1.0)))
        else:
            d, t = _invert_atom(z, s, xi, wgt, m.grid)
            dens += d
            tail += t
    if m.density.any():
        d, t = _invert_density(z, s, m)
        dens += d
        tail += t
    return SpectralMeasure(m.grid, tuple(atoms_out), dens), InvertReport(tail)


def invert(fp: FuchsianParams, m: SpectralMeasure) -> SpectralMeasure:
    return invert_detailed(fp, m)[0]


def norm_bound(fp: FuchsianParams) -> float:
    """Operator norm bound |s + 1|^(-1) of the inverse on L1 + C*delta."""
    return 1.0 / abs(fp.s + 1.0)


def tail_remainder(fp: FuchsianParams, grid: PGrid) -> float:
    """Order of the neglected |p_max - z|^(s+1) power tail for s < -1 output."""
    if fp.s >= -1.0:
        return 0.0
    edge = grid.p_max - abs(fp.z)
    if edge <= 0.0:
        return math.inf
    return edge ** (fp.s + 1.0) / abs(fp.s + 1.0)
