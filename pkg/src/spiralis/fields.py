"""Physical-space reconstruction of the flow and the nonlinear residual.

All quantities derive from the scaled stream function psi(beta, u) whose
perturbation lives in the mode bundles.  The base fields are

    b  = dtb psi,  U1 = dtU psi,  u1 = du psi,
    d  = (dtU + 1) dtb psi,       ub = du dtb psi,

plus their images under the derivation beta*d/dU and under d/du.  From them:

    T1   = 2 b U1 / d                      (radial-log derivative of psi)
    A1   = u1 - ub U1 / d                  (angular derivative of psi)
    gU   = T1 - ub/(2b) A1
    gu   = d/(2b) A1
    qv   = U1^(-1/(2mu))
    oc   = qv * Omega(u)                   (scaled vorticity)
    W    = -(1/(2mu)) d * oc
    F    = 2 mu^2 ( -dtU gU - du gu + W )

The outer dtU and du derivatives in F are expanded analytically by the
product/quotient rule into the base fields; this makes F vanish identically
on the background, and no finite differencing in beta occurs anywhere.

Two evaluation routes exist for the base fields.  The normative "images"
route reads every derivative from the precomputed operator-image measures of
the bundles (the same commutator bookkeeping that built them), which makes
the residual exactly consistent with the mode preconditioner.  The
diagnostic "weights" route multiplies the mode measure by exact polynomial
weights in (i p beta, i n beta) (see weights.py); it realizes the true
scaled derivatives of the represented stream function and is used for
independent cross-checks and sensitivity reporting.  The two agree up to the
measure-regularization of the image chains, which is the documented
discretization sensitivity of this construction.

Positivity guards: -b > 0, U1 > 0, -d > 0 at every evaluation point; a
violation invalidates the state.

A solution of strength ell is represented by scaling psi (background
included) with ell^(2 mu) and the vorticity data with ell; this maps
solutions to solutions and scales the t->0+ profile h = Omega qv rad^(1/mu)
exactly linearly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, GuardViolationError, RangeError
from .grids import BetaGrid, PGrid
from .linear_solve import VorticityData
from .measures import SpectralMeasure, eval_measures
from .modes import FlowParams, ModeBundle, reconstruct_L_image
from .weights import base_field_weights, linear_weight_rule, to_weight_rule

_REAL_TOL = 1e-8
_EVAL_BLOCK = 2048

_GUARDS = (
    ("neg_dbeta_psi", "b", -1.0),      # -dtb psi > 0
    ("dU_psi", "U1", 1.0),             # dtU psi > 0
    ("neg_dU1_dbeta_psi", "d", -1.0),  # -(dtU+1) dtb psi > 0
)

_FIELD_KEYS = (
    "psi", "b", "U1", "u1", "d", "ub",
    "DUb", "DUU1", "DUu1", "DUd", "DUub",
    "dU1", "du1", "dd", "dub",
)

# image route: base field -> (image-combination key, per-mode factor)
_IMAGE_TABLE = {
    "psi": ("u", lambda n: 1.0),
    "b": ("P2", lambda n: -1.0),
    "U1": ("Q2", lambda n: 1.0),
    "u1": ("u", lambda n: 1j * n),
    "d": ("QP2", lambda n: -1.0),
    "ub": ("P2", lambda n: -1j * n),
    "DUb": ("DUbr", lambda n: -1.0),
    "DUU1": ("QQ2", lambda n: 1.0),
    "DUu1": ("Q1", lambda n: 1j * n),
    "DUd": ("QQP2", lambda n: -1.0),
    "DUub": ("DUbr", lambda n: -1j * n),
    "dU1": ("Q2", lambda n: 1j * n),
    "du1": ("u", lambda n: -float(n * n)),
    "dd": ("QP2", lambda n: -1j * n),
    "dub": ("P2", lambda n: float(n * n)),
}
_MEASURE_KEYS = ("u", "P2", "Q2", "Q1", "QP2", "QQ2", "DUbr", "QQP2")

_BACKGROUND = {
    "psi": lambda mu: 1.0 / (2.0 * mu - 1.0),
    "b": lambda mu: -1.0,
    "U1": lambda mu: 1.0,
    "d": lambda mu: -2.0 * mu,
}


def mode_eval_measures(bundle: ModeBundle, mu: float) -> dict[str, SpectralMeasure]:
    """The eight image combinations evaluated pointwise per mode.

    Everything reduces to the stored {u, Pu, Qu, QQu, QPu, QQPu} by the
    linearity bookkeeping of the (Q+a)(Q+b)P^i conventions.
    """
    n = bundle.n
    u, Pu, Qu = bundle.u, bundle.Pu, bundle.Qu
    QQu, QPu, QQPu = bundle.QQu, bundle.QPu, bundle.QQPu
    tm = 2.0 * mu
    return {
        "u": u,
        "P2": Pu + tm * u,
        "Q2": Qu + tm * u,
        "Q1": Qu + u,
        "QP2": QPu + tm * Qu + (tm + 1.0) * Pu + (tm * (tm + 1.0)) * u,
        "QQ2": QQu + tm * Qu + (tm - n * (1.0 - n)) * u,
        "DUbr": QPu + tm * Qu + Pu + tm * u,
        "QQP2": (
            QQPu
            + (tm - 1.0) * QPu
            + (tm + 1.0 - (n + 1.0) * (2.0 - n)) * Pu
            + tm * QQu
            + (tm * (tm + 1.0)) * Qu
            + (tm * (tm + 1.0) - tm * n * (1.0 - n)) * u
        ),
    }


def eval_moments(m: SpectralMeasure, betas: np.ndarray, max_pow: int = 3) -> np.ndarray:
    """M_a(beta) = sum_atoms w xi^a e^(i xi beta) + int dens p^a e^(i p beta) dp
    for a = 0..max_pow, sharing one exp kernel."""
    p = m.grid.nodes
    h = m.grid.h_p
    trap = np.full(m.grid.size, h)
    trap[0] = trap[-1] = 0.5 * h
    rows = np.array([m.density * trap * p**a for a in range(max_pow + 1)])
    out = np.zeros((max_pow + 1, betas.size), dtype=np.complex128)
    for lo in range(0, betas.size, _EVAL_BLOCK):
        blk = slice(lo, min(lo + _EVAL_BLOCK, betas.size))
        kernel = np.exp(1j * np.outer(p, betas[blk]))
        out[:, blk] = rows @ kernel
    for xi, w in m.atoms:
        phase = w * np.exp(1j * xi * betas)
        for a in range(max_pow + 1):
            out[a] += xi**a * phase
    return out


def _rule_from_moments(rule, moments: np.ndarray, betas: np.ndarray) -> np.ndarray:
    out = np.zeros(betas.size, dtype=np.complex128)
    for coef, p_pow, b_pow in rule:
        out += coef * betas**b_pow * moments[p_pow]
    return out


@dataclass(frozen=True, eq=False)
class SolutionState:
    """Background plus accumulated increments, with the vorticity data.

    increments holds one bundle collection per accepted correction; the
    background state is the empty tuple.  strength is the amplitude ell of
    the vortex strength scaling.
    """

    params: FlowParams
    vort: VorticityData
    increments: tuple[dict[int, ModeBundle], ...] = ()
    beta_grid: BetaGrid = field(default_factory=BetaGrid)
    u_points: int = 256
    strength: float = 1.0

    def __post_init__(self):
        if self.strength <= 0.0:
            raise ConfigError("reconstruction requires positive strength")
        if self.vort.n_fold != self.params.n_fold:
            raise ConfigError("vorticity data symmetry differs from flow parameters")

    def mode_bundles(self) -> dict[int, ModeBundle]:
        total: dict[int, ModeBundle] = {}
        for coll in self.increments:
            for n, b in coll.items():
                total[n] = total[n] + b if n in total else b
        return total

    def with_increment(self, coll: dict[int, ModeBundle]) -> "SolutionState":
        return replace(self, increments=self.increments + (coll,))

    def u_period_nodes(self) -> np.ndarray:
        period = 2.0 * np.pi / self.params.n_fold
        return period * np.arange(self.u_points) / self.u_points


@dataclass(frozen=True)
class FieldSample:
    psi: float
    dtb_psi: float
    dtU_psi: float
    du_psi: float
    rad: float        # scaled radius (dtb psi / -mu)^(1/2)
    qv: float         # (dtU psi)^(-1/(2mu))
    oc: float         # scaled vorticity qv * Omega(u)
    gU: float
    gu: float
    W: float
    h: float          # t-free invariant omega r^(1/mu)
    beta: float
    u: float
    theta: float
    t: float
    r: float
    a: float
    x: np.ndarray
    v: np.ndarray


@dataclass(frozen=True, eq=False)
class PhysicalField:
    betas: np.ndarray
    us: np.ndarray
    values: np.ndarray  # shape (len(betas), len(us))

    def sup_norm(self) -> float:
        return float(np.abs(self.values).max())


def _to_real(arr: np.ndarray, what: str) -> np.ndarray:
    scale = max(1.0, float(np.abs(arr.real).max(initial=0.0)))
    if np.abs(arr.imag).max(initial=0.0) > _REAL_TOL * scale:
        raise ConfigError(f"{what}: synthesis produced a non-real field")
    return np.ascontiguousarray(arr.real)


def base_fields(
    state: SolutionState,
    betas: np.ndarray,
    us: np.ndarray,
    paired: bool = False,
    route: str = "images",
) -> dict[str, np.ndarray]:
    """Pointwise base fields on the grid betas x us, or along paired points.

    Returns real arrays of shape (len(betas), len(us)) (grid mode) or
    (len(betas),) (paired mode, requires len(us) == len(betas)).
    """
    betas = np.atleast_1d(np.asarray(betas, dtype=float))
    us = np.atleast_1d(np.asarray(us, dtype=float))
    if paired and betas.size != us.size:
        raise ConfigError("paired evaluation needs matching beta and u arrays")
    if route not in ("images", "weights"):
        raise ConfigError(f"unknown evaluation route {route!r}")
    mu = state.params.mu
    amp = state.strength ** (2.0 * mu)
    tables = base_field_weights(mu) if route == "weights" else None
    shape = betas.shape if paired else (betas.size, us.size)
    acc = {k: np.zeros(shape, dtype=np.complex128) for k in _FIELD_KEYS}

    bundles = state.mode_bundles()
    for n, bundle in sorted(bundles.items()):
        if bundle.u.is_zero():
            continue
        # negative modes are mirror images of positive ones (Hermitian data),
        # so each +n contribution is doubled by its conjugate
        if n < 0 and -n in bundles:
            continue
        paired_mode = n > 0 and -n in bundles
        phase = np.exp(1j * n * us)
        if route == "images":
            meas = mode_eval_measures(bundle, mu)
            stack = [meas[k] for k in _MEASURE_KEYS]
            evals = dict(zip(_MEASURE_KEYS, eval_measures(stack, betas)))
            contribs = {
                name: factor(n) * evals[mkey]
                for name, (mkey, factor) in _IMAGE_TABLE.items()
            }
        else:
            moments = eval_moments(bundle.u, betas)
            contribs = {}
            for name in _FIELD_KEYS:
                poly, du_pow = tables[name]
                rule = to_weight_rule(poly, n, du_pow)
                contribs[name] = _rule_from_moments(rule, moments, betas)
        for name in _FIELD_KEYS:
            term = contribs[name] * phase if paired else np.outer(contribs[name], phase)
            acc[name] += term + np.conj(term) if paired_mode else term

    out = {}
    for name in _FIELD_KEYS:
        bg = _BACKGROUND.get(name, lambda mu: 0.0)(mu)
        out[name] = amp * _to_real(acc[name] + bg, name)
    return out


def guard_check(fields: dict[str, np.ndarray], margins_only: bool = False) -> dict[str, float]:
    """Minimum guard margins over the evaluated points; raises on violation."""
    margins = {}
    for name, key, sign in _GUARDS:
        margins[name] = float((sign * fields[key]).min())
    if not margins_only:
        for name, val in margins.items():
            if val <= 0.0:
                raise GuardViolationError(
                    f"guard violated: {name} must stay positive, reached {val:.3e}",
                    margins=margins,
                )
    return margins


def _omega_arrays(state: SolutionState, us: np.ndarray):
    om = state.strength * np.real(state.vort.value(us))
    dom = np.zeros_like(us)
    for n, c in state.vort.coeffs.items():
        dom = dom + np.real(1j * n * state.strength * c * np.exp(1j * n * us))
    return om, dom


def _algebra(state: SolutionState, f: dict[str, np.ndarray], us: np.ndarray, paired: bool):
    """Derived pointwise quantities including the residual F."""
    mu = state.params.mu
    b, U1, u1, d, ub = f["b"], f["U1"], f["u1"], f["d"], f["ub"]
    om, dom = _omega_arrays(state, us)
    if not paired and b.ndim == 2:
        om = om[None, :]
        dom = dom[None, :]

    T1 = 2.0 * b * U1 / d
    A1 = u1 - ub * U1 / d
    gU = T1 - ub / (2.0 * b) * A1
    gu = d / (2.0 * b) * A1
    qv = U1 ** (-1.0 / (2.0 * mu))
    oc = qv * om
    W = -(1.0 / (2.0 * mu)) * d * oc

    DUb, DUU1, DUu1, DUd, DUub = f["DUb"], f["DUU1"], f["DUu1"], f["DUd"], f["DUub"]
    dU1, du1, dd, dub = f["dU1"], f["du1"], f["dd"], f["dub"]

    DU_T1 = 2.0 * (DUb * U1 + b * DUU1) / d - 2.0 * b * U1 * DUd / d**2
    DU_A1 = DUu1 - (DUub * U1 + ub * DUU1) / d + ub * U1 * DUd / d**2
    DU_gU = (
        DU_T1
        - (DUub / (2.0 * b) - ub * DUb / (2.0 * b**2)) * A1
        - ub / (2.0 * b) * DU_A1
    )
    dtU_gU = DU_gU + (2.0 * mu - 1.0) * gU

    du_A1 = du1 - (dub * U1 + ub * dU1) / d + ub * U1 * dd / d**2
    du_gu = (dd / (2.0 * b) - d * ub / (2.0 * b**2)) * A1 + d / (2.0 * b) * du_A1

    F = 2.0 * mu**2 * (-dtU_gU - du_gu + W)
    return {"T1": T1, "A1": A1, "gU": gU, "gu": gu, "qv": qv, "oc": oc, "W": W, "F": F}


def residual_F(
    state: SolutionState,
    betas: np.ndarray | None = None,
    us: np.ndarray | None = None,
    with_margins: bool = False,
    route: str = "images",
):
    """Nonlinear residual on the (beta, u) grid.

    The default grid is the full symmetric beta grid times one fundamental
    u period (all fields are 2 pi / N periodic).
    """
    if betas is None:
        betas = state.beta_grid.nodes
    if us is None:
        us = state.u_period_nodes()
    f = base_fields(state, betas, us, route=route)
    margins = guard_check(f)
    alg = _algebra(state, f, us, paired=False)
    out = PhysicalField(np.asarray(betas, float), np.asarray(us, float), alg["F"])
    if with_margins:
        return out, margins
    return out


def linear_residual_image(
    state: SolutionState,
    betas: np.ndarray | None = None,
    us: np.ndarray | None = None,
    route: str = "images",
) -> PhysicalField:
    """Pointwise L dpsi + 2 mu^2 dVort, the first variation of residual_F
    around the background; the difference of the two is the pure nonlinear
    remainder.  The images route reconstructs L dpsi from the stored operator
    images; the weights route applies the exact operator polynomial to the
    mode measures."""
    if betas is None:
        betas = state.beta_grid.nodes
    if us is None:
        us = state.u_period_nodes()
    betas = np.atleast_1d(np.asarray(betas, dtype=float))
    us = np.atleast_1d(np.asarray(us, dtype=float))
    mu = state.params.mu
    amp = state.strength ** (2.0 * mu)
    acc = np.zeros((betas.size, us.size), dtype=np.complex128)
    bundles = state.mode_bundles()
    for n, bundle in sorted(bundles.items()):
        if bundle.u.is_zero() or (n < 0 and -n in bundles):
            continue
        if route == "images":
            img = reconstruct_L_image(state.params, bundle)
            vals = eval_measures([img], betas)[0]
        else:
            moments = eval_moments(bundle.u, betas)
            vals = _rule_from_moments(linear_weight_rule(mu, n), moments, betas)
        term = np.outer(vals, np.exp(1j * n * us))
        acc += term + np.conj(term) if (n > 0 and -n in bundles) else term
    lin = amp * _to_real(acc, "linear residual")
    data = 2.0 * mu**2 * state.strength * np.real(state.vort.perturbation(us))
    return PhysicalField(betas, us, lin + data[None, :])


def eval_fields(state: SolutionState, beta: float, u: float, t: float = 1.0) -> FieldSample:
    """All reconstructed quantities at one similarity point (beta > 0)."""
    if beta <= 0.0:
        raise RangeError("physical evaluation requires beta > 0")
    if t <= 0.0:
        raise RangeError("self-similar reconstruction requires t > 0")
    if beta > state.beta_grid.b_max:
        raise RangeError(f"beta = {beta} outside the grid range")
    mu = state.params.mu
    bb = np.array([beta])
    uu = np.array([u])
    f = base_fields(state, bb, uu, paired=True)
    guard_check(f)
    alg = _algebra(state, f, uu, paired=True)

    b_val = float(f["b"][0])
    U1_val = float(f["U1"][0])
    rad = float(np.sqrt(-b_val / mu))
    qv = float(alg["qv"][0])
    oc = float(alg["oc"][0])
    theta = beta + u
    r = (t / beta) ** mu * rad
    T1 = float(alg["T1"][0])
    A1 = float(alg["A1"][0])
    rot = np.array([
        T1 * np.cos(theta) - A1 * np.sin(theta),
        T1 * np.sin(theta) + A1 * np.cos(theta),
    ])
    v = (t / beta) ** (mu - 1.0) / rad * np.array([-rot[1], rot[0]])
    x = r * np.array([np.cos(theta), np.sin(theta)])
    h = oc * rad ** (1.0 / mu)
    return FieldSample(
        psi=float(f["psi"][0]),
        dtb_psi=b_val,
        dtU_psi=U1_val,
        du_psi=float(f["u1"][0]),
        rad=rad, qv=qv, oc=oc,
        gU=float(alg["gU"][0]), gu=float(alg["gu"][0]), W=float(alg["W"][0]),
        h=h, beta=float(beta), u=float(u), theta=float(theta), t=float(t),
        r=float(r), a=float(np.log(r)), x=x, v=v,
    )


@dataclass(frozen=True, eq=False)
class Polyline:
    u0: float
    t: float | None
    beta: np.ndarray
    xy: np.ndarray      # (N, 2)
    vort: np.ndarray    # omega if t was given, else the invariant h
    truncated: bool = False


def trace_streamline(
    state: SolutionState,
    u0: float,
    beta_range: tuple[float, float],
    t: float | None = None,
    step: float = 0.05,
) -> Polyline:
    """Sample the fixed-u0 pseudo-streamline over a beta interval.

    Geometry uses t = 1 when no time is supplied; the vorticity column then
    reports the t-free invariant h instead of omega.
    """
    b0, b1 = beta_range
    if b0 <= 0.0 or b1 < b0:
        raise ConfigError("beta range must satisfy 0 < b0 <= b1")
    if b1 > state.beta_grid.b_max:
        raise RangeError("beta range exceeds the grid")
    n_pts = max(1, int(round((b1 - b0) / step)) + 1)
    betas = b0 + step * np.arange(n_pts)
    betas = betas[betas <= b1 + 1e-12]
    us = np.full_like(betas, u0)

    f = base_fields(state, betas, us, paired=True)
    mu = state.params.mu
    ok = (f["b"] < 0) & (f["U1"] > 0) & (f["d"] < 0)
    truncated = not ok.all()
    if truncated:
        stop = int(np.argmin(ok))
        betas, us = betas[:stop], us[:stop]
        f = {k: v[:stop] for k, v in f.items()}
        if betas.size == 0:
            raise GuardViolationError("guard violated at the first trace sample")

    t_eff = 1.0 if t is None else t
    rad = np.sqrt(-f["b"] / mu)
    qv = f["U1"] ** (-1.0 / (2.0 * mu))
    om_u, _ = _omega_arrays(state, us)
    oc = qv * om_u
    r = (t_eff / betas) ** mu * rad
    theta = betas + u0
    xy = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    vort = oc * rad ** (1.0 / mu) if t is None else (betas / t_eff) * oc
    return Polyline(u0=u0, t=t, beta=betas, xy=xy, vort=vort, truncated=truncated)


def invert_coordinates(
    state: SolutionState,
    x: np.ndarray,
    t: float = 1.0,
    tol_r: float | None = None,
    max_iter: int = 200,
) -> tuple[float, float]:
    """(beta, u) of a physical point, by bisection along fixed theta.

    Along fixed theta = beta + u the radius is strictly monotone in beta
    (the a_phi > 0 guard), so the preimage is unique.
    """
    x = np.asarray(x, dtype=float)
    rx = float(np.hypot(x[0], x[1]))
    if rx == 0.0:
        raise RangeError("the origin is not in the chart")
    theta0 = float(np.arctan2(x[1], x[0]))
    tol = tol_r if tol_r is not None else 1e-10 * rx

    def radius(beta: float) -> float:
        uu = theta0 - beta
        f = base_fields(state, np.array([beta]), np.array([uu]), paired=True)
        guard_check(f)
        return float((t / beta) ** state.params.mu * np.sqrt(-f["b"][0] / state.params.mu))

    lo, hi = state.beta_grid.h_b, state.beta_grid.b_max
    r_lo, r_hi = radius(lo), radius(hi)
    if not (r_hi <= rx <= r_lo):
        raise RangeError(
            f"radius {rx:.3e} outside the covered range [{r_hi:.3e}, {r_lo:.3e}]"
        )
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        r_mid = radius(mid)
        if abs(r_mid - rx) < tol:
            return mid, theta0 - mid
        if r_mid > rx:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), theta0 - 0.5 * (lo + hi)


def scaled_state(state: SolutionState, s: float) -> SolutionState:
    """Vortex strength scaling at the state level (s > 0)."""
    if s <= 0.0:
        raise ConfigError(
            "state-level scaling requires s > 0; negative strengths exist only "
            "as reflected solutions and are handled at the data level"
        )
    return replace(state, strength=state.strength * s)


# ---------------------------------------------------------------------------
# serialization

def state_to_json_dict(state: SolutionState) -> dict:
    modes = {}
    for n, b in sorted(state.mode_bundles().items()):
        modes[str(n)] = {
            k: getattr(b, k).to_json_dict() for k in ("u", "Pu", "Qu", "QQu", "QPu", "QQPu")
        }
    return {
        "params": {
            "mu": state.params.mu,
            "n_fold": state.params.n_fold,
            "n_max": state.params.n_max,
        },
        "vort": state.vort.to_json_dict(),
        "beta_grid": state.beta_grid.to_json_dict(),
        "u_points": state.u_points,
        "strength": state.strength,
        "modes": modes,
    }


def state_from_json_dict(d: dict) -> SolutionState:
    params = FlowParams(
        mu=float(d["params"]["mu"]),
        n_fold=int(d["params"]["n_fold"]),
        n_max=int(d["params"]["n_max"]),
    )
    vort = VorticityData.from_json_dict(d["vort"])
    bgrid = BetaGrid.from_json_dict(d["beta_grid"])
    modes: dict[int, ModeBundle] = {}
    pgrid: PGrid | None = None
    for key, imgs in d.get("modes", {}).items():
        n = int(key)
        loaded = {}
        for name in ("u", "Pu", "Qu", "QQu", "QPu", "QQPu"):
            m = SpectralMeasure.from_json_dict(imgs[name], pgrid)
            pgrid = pgrid or m.grid
            loaded[name] = m
        modes[n] = ModeBundle(n, **loaded)
    increments = (modes,) if modes else ()
    return SolutionState(
        params=params,
        vort=vort,
        increments=increments,
        beta_grid=bgrid,
        u_points=int(d.get("u_points", 256)),
        strength=float(d.get("strength", 1.0)),
    )


def save_state(state: SolutionState, path):
    with open(path, "w") as fh:
        json.dump(state_to_json_dict(state), fh)


def load_state(path) -> SolutionState:
    with open(path) as fh:
        return state_from_json_dict(json.load(fh))
