"""Mode-by-mode solution of the linearized problem, the map from vorticity
data to the initial vorticity profile, its local inversion, and the strength
scaling law.

The linearization around the stationary background reads, per harmonic n,

    L_n psihat(., n) + 2 mu^2 Vorthat(n) delta(p) = 0,

so each mode solves to u_n = L_n^{-1}(-2 mu^2 Vorthat(n) delta_0).  The
initial profile at t -> 0+ picks up the total p-mass of the first variation:

    omring^(n) = mu^(-1/(2mu)) [ (2mu-1) int (Q + P + 4mu) (L_n^{-1}
                 Vorthat(n) delta_0) dp + Vorthat(n) ]

which in terms of the stored bundle u_n = L_n^{-1}(-2 mu^2 Vorthat(n) d0)
carries the prefactor -(2mu-1)/(2mu^2) on the bundle-mass term.  At n = 0 the
chain is exact and collapses to multiplication by -mu^(-1/(2mu)); for large
|n| the multiplier approaches +mu^(-1/(2mu)), which is what makes the
diagonal fixed-point inversion of the map converge.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    DivergenceError,
    GuardViolationError,
    MissingBundleError,
)
from .grids import PGrid
from .measures import SpectralMeasure
from .modes import (
    FlowParams,
    ModeBundle,
    apply_L_inv,
    estimate_norm,
    guard_invertibility,
    mirror_bundle,
    solve_modes_parallel,
)

_HERMITIAN_TOL = 1e-12


def _hermitian_complete(coeffs: dict[int, complex]) -> dict[int, complex]:
    out: dict[int, complex] = {}
    for n, c in coeffs.items():
        c = complex(c)
        if n in out and abs(out[n] - c) > _HERMITIAN_TOL * max(1.0, abs(c)):
            raise DataError(f"conflicting coefficient for harmonic {n}")
        out[n] = c
        out.setdefault(-n, np.conj(c))
    return out


def _check_hermitian(coeffs: dict[int, complex], what: str):
    for n, c in coeffs.items():
        partner = coeffs.get(-n)
        if partner is None or abs(np.conj(partner) - c) > 1e-9 * max(1.0, abs(c)):
            raise DataError(f"{what}: coefficients are not Hermitian at n = {n}")


@dataclass(frozen=True)
class VorticityData:
    """Per-streamline vorticity profile: base value plus a small perturbation
    with absolutely summable harmonics (only multiples of n_fold active)."""

    n_fold: int
    base: float
    coeffs: dict[int, complex]

    def __post_init__(self):
        if self.base == 0.0:
            raise ConfigError("base vorticity must be nonzero")
        for n in self.coeffs:
            if n % self.n_fold != 0:
                raise ConfigError(f"harmonic {n} incompatible with {self.n_fold}-fold symmetry")
        _check_hermitian(self.coeffs, "vorticity data")

    @staticmethod
    def from_harmonics(n_fold: int, base: float, coeffs: dict[int, complex]) -> "VorticityData":
        return VorticityData(n_fold, base, _hermitian_complete(coeffs))

    @staticmethod
    def background(params: FlowParams) -> "VorticityData":
        return VorticityData(params.n_fold, params.base_vorticity, {})

    def coeff(self, n: int) -> complex:
        return self.coeffs.get(n, 0.0 + 0.0j)

    def wiener_norm(self) -> float:
        return float(sum(abs(c) for c in self.coeffs.values()))

    def perturbation(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros_like(np.asarray(u, dtype=float), dtype=complex)
        for n, c in self.coeffs.items():
            out += c * np.exp(1j * n * np.asarray(u, dtype=float))
        return out.real if np.allclose(out.imag, 0.0, atol=1e-10) else out

    def value(self, u: np.ndarray) -> np.ndarray:
        return self.base + self.perturbation(u)

    def scaled(self, s: float) -> "VorticityData":
        return VorticityData(self.n_fold, s * self.base, {n: s * c for n, c in self.coeffs.items()})

    def to_json_dict(self) -> dict:
        return {
            "N": self.n_fold,
            "base": self.base,
            "coeffs": [[n, c.real, c.imag] for n, c in sorted(self.coeffs.items())],
        }

    @staticmethod
    def from_json_dict(d: dict) -> "VorticityData":
        coeffs = {int(n): complex(re, im) for n, re, im in d.get("coeffs", [])}
        return VorticityData(int(d["N"]), float(d["base"]), coeffs)


@dataclass(frozen=True)
class InitialVorticity:
    """Angular profile of the vorticity at t -> 0+, scaled by r^(1/mu)."""

    n_fold: int
    base: float
    coeffs: dict[int, complex]

    def __post_init__(self):
        _check_hermitian(self.coeffs, "initial vorticity")

    def coeff(self, n: int) -> complex:
        return self.coeffs.get(n, 0.0 + 0.0j)

    def l1_mismatch(self, other: "InitialVorticity") -> float:
        keys = set(self.coeffs) | set(other.coeffs)
        return abs(self.base - other.base) + float(
            sum(abs(self.coeff(n) - other.coeff(n)) for n in keys)
        )

    def to_json_dict(self) -> dict:
        return {
            "N": self.n_fold,
            "base": self.base,
            "coeffs": [[n, c.real, c.imag] for n, c in sorted(self.coeffs.items())],
        }

    @staticmethod
    def from_json_dict(d: dict) -> "InitialVorticity":
        coeffs = {int(n): complex(re, im) for n, re, im in d.get("coeffs", [])}
        return InitialVorticity(int(d["N"]), float(d["base"]), coeffs)


def profile_multiplier(params: FlowParams) -> float:
    """mu^(-1/(2mu)), the asymptotic data-to-profile multiplier."""
    return params.mu ** (-1.0 / (2.0 * params.mu))


def base_initial_vorticity(params: FlowParams) -> float:
    return profile_multiplier(params) * params.base_vorticity


def check_smallness(params: FlowParams, vort: VorticityData, eps_ratio: float = 0.05):
    """Wiener-algebra smallness guard; the radius is empirical, not proven."""
    w = vort.wiener_norm()
    lim = eps_ratio * abs(vort.base)
    if w > lim:
        raise GuardViolationError(
            f"vorticity perturbation guard: wiener norm {w:.3e} exceeds "
            f"smallness radius {lim:.3e}",
            margins={"wiener_norm": w, "radius": lim},
        )


def solve_linearized(
    params: FlowParams,
    vort: VorticityData,
    grid: PGrid | None = None,
    tol_neumann: float = 1e-10,
    k_max: int = 200,
    max_workers: int | None = None,
) -> dict[int, ModeBundle]:
    """Per-mode bundles u_n = L_n^{-1}(-2 mu^2 Vorthat(n) delta_0)."""
    g = grid or PGrid()
    for n in params.active_modes():
        rep = guard_invertibility(params, n)
        if not rep.ok:
            raise ConfigError("; ".join(rep.violations))

    rhs_scale = -2.0 * params.mu**2

    def solve_one(n: int) -> ModeBundle:
        c = vort.coeff(n)
        if c == 0.0:
            return apply_L_inv(params, n, SpectralMeasure.zero(g))
        try:
            return apply_L_inv(
                params, n, SpectralMeasure.delta(g, 0.0, rhs_scale * c), tol_neumann, k_max
            )
        except DivergenceError as exc:
            raise DivergenceError(f"mode n = {n}: {exc}") from exc

    # solve the nonnegative modes; negative modes are mirror images, which
    # keeps Hermitian data exactly real in physical space
    nonneg = [n for n in params.active_modes() if n >= 0]
    solved = solve_modes_parallel(solve_one, nonneg, max_workers)
    out: dict[int, ModeBundle] = dict(solved)
    for n in nonneg:
        if n > 0:
            out[-n] = mirror_bundle(solved[n])
    return out


def initial_vorticity(
    params: FlowParams, bundles: dict[int, ModeBundle], vort: VorticityData
) -> InitialVorticity:
    """First-order initial profile from the bundle masses.

    The profile coefficient is the total p-mass of the first variation,
    mu^(-1/(2mu)) [ -(2mu-1)/(2mu^2) int (Q + P + 4mu) u_n dp + Vorthat(n) ].
    Integration by parts gives int (Q + P) u dp = -2 int u dp exactly (the
    boundary terms vanish on decaying measures), so the integral reduces to
    (4mu - 2) times the total mass of u_n; this avoids quadrature error in
    the image measures near their singular points.
    """
    mult = profile_multiplier(params)
    mu = params.mu
    coeffs: dict[int, complex] = {}
    for n in params.active_modes():
        b = bundles.get(n)
        if b is None:
            raise MissingBundleError(f"no mode bundle for harmonic n = {n}")
        mass = (4.0 * mu - 2.0) * b.u.total_mass()
        val = mult * (-(2.0 * mu - 1.0) / (2.0 * mu**2) * mass + vort.coeff(n))
        if val != 0.0:
            coeffs[n] = val
    return InitialVorticity(params.n_fold, base_initial_vorticity(params), coeffs)


def invert_initial_map(
    params: FlowParams,
    target: InitialVorticity,
    tol: float = 1e-10,
    iter_max: int = 60,
    grid: PGrid | None = None,
    max_workers: int | None = None,
) -> VorticityData:
    """Recover vorticity data from a target initial profile.

    Diagonally preconditioned fixed point: the forward map is close to
    multiplication by -mu^(-1/(2mu)) at n = 0 and +mu^(-1/(2mu)) at large n.
    """
    base_prof = base_initial_vorticity(params)
    if abs(target.base - base_prof) > 1e-9 * max(1.0, abs(base_prof)):
        raise ConfigError(
            f"target base {target.base} differs from the profile base "
            f"{base_prof}; rescale the data first (strength scaling)"
        )
    mult = profile_multiplier(params)
    vort = VorticityData(params.n_fold, params.base_vorticity, {})
    for it in range(iter_max):
        bundles = solve_linearized(params, vort, grid, max_workers=max_workers)
        prof = initial_vorticity(params, bundles, vort)
        mismatch = prof.l1_mismatch(target)
        if mismatch < tol:
            return vort
        new_coeffs = dict(vort.coeffs)
        for n in params.active_modes():
            d_inv = (-1.0 / mult) if n == 0 else (1.0 / mult)
            delta = d_inv * (target.coeff(n) - prof.coeff(n))
            if delta != 0.0:
                new_coeffs[n] = new_coeffs.get(n, 0.0 + 0.0j) + delta
        vort = VorticityData(params.n_fold, params.base_vorticity, new_coeffs)
    raise DivergenceError(
        f"initial-data inversion did not converge in {iter_max} iterations "
        f"(final mismatch {mismatch:.3e})"
    )


@dataclass(frozen=True)
class RecommendResult:
    ok: bool
    n_fold: int | None
    factor: float
    tried: dict[int, float]


def recommend_N(
    mu: float,
    n_max: int = 2,
    n_cap: int = 64,
    contraction_target: float = 0.5,
    grid: PGrid | None = None,
) -> RecommendResult:
    """Smallest symmetry order N whose active modes all pass the guards and
    whose measured Neumann contraction factor stays below the target."""
    if not (0.0 < contraction_target < 1.0):
        raise ConfigError("contraction_target must lie in (0, 1)")
    g = grid or PGrid()
    tried: dict[int, float] = {}
    best = np.inf
    for N in range(2, n_cap + 1):
        params = FlowParams(mu, N, n_max)
        worst = 0.0
        ok = True
        for n in params.active_modes():
            if not guard_invertibility(params, n).ok:
                ok = False
                break
            if n == 0:
                continue
            worst = max(worst, estimate_norm("ER_inv", params, n, grid=g))
        if not ok:
            continue
        tried[N] = worst
        best = min(best, worst)
        if worst <= contraction_target:
            return RecommendResult(True, N, worst, tried)
    return RecommendResult(False, None, best, tried)


def scale_solution(
    s: float, vort: VorticityData, profile: InitialVorticity
) -> tuple[VorticityData, InitialVorticity]:
    """Vortex strength scaling: profile goes to s * profile, and the data
    scales linearly with it (the associated velocity field is s v(x, s t))."""
    if s == 0.0:
        raise ConfigError("scale factor must be nonzero")
    return (
        vort.scaled(s),
        InitialVorticity(
            profile.n_fold, s * profile.base, {n: s * c for n, c in profile.coeffs.items()}
        ),
    )


def save_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj.to_json_dict(), fh, indent=1)


def load_vorticity(path_or_inline: str) -> VorticityData:
    txt = path_or_inline.strip()
    if txt.startswith("{"):
        return VorticityData.from_json_dict(json.loads(txt))
    with open(path_or_inline) as fh:
        return VorticityData.from_json_dict(json.load(fh))
