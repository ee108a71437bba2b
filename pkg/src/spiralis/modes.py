"""Per-mode operators and their inversion.

For harmonic index n the third-order mode operator splits as L_n = R - E with

    R = (Q + m-)(Q + m+) P,   E = (2 mu - 1)(Q - P),
    P = p d/dp,   Q = (p - n) d/dp,   m+- = (2 +- n) mu.

P and the Q + m factors are all Fuchsian: P = A_{0,0}, Q + m = A_{n,-m}, so R
inverts as an explicit composition of three one-sided integrals,

    R^{-1} = K_{0,0} K_{n,-m-} K_{n,-m+}.

E involves a bare d/dp, which on a measure with atoms would create dipoles.
The whole inversion is therefore organized so that E R^{-1} is evaluated with
NO numerical differentiation, through commutator bookkeeping:

    P R^{-1}            = K_{n,-m-} K_{n,-m+}
    (Q+a)(Q+b) P R^{-1} = id + (b-m-) K_{n,-m-} + (a-m+) K_{n,-m+}
                          + (a-m+)(b-m-) K_{n,-m-} K_{n,-m+}
    (Q+n)(Q+1-n) R^{-1} = K_{0,-2} [ (Q+n+1)(Q+2-n) P R^{-1} + 2n(1-n) R^{-1} ]
    (Q+1-n) R^{-1}      = K_{n,-n} (Q+n)(Q+1-n) R^{-1}
    Q R^{-1}            = (Q+1-n) R^{-1} + (n-1) R^{-1}

(the elimination step with (a, b) = (n+1, 2-n) avoids the pathological
(P+1)^{-1}).  L_n is then inverted by the Neumann series
L_n^{-1} = R^{-1} sum_k (E R^{-1})^k, truncated by norm.  Finite-difference
application of P and Q exists only as a test oracle.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import fuchsian
from .errors import ConfigError, DivergenceError
from .fuchsian import FuchsianParams
from .grids import PGrid
from .measures import SpectralMeasure


@dataclass(frozen=True)
class FlowParams:
    """Physical and truncation parameters.

    mu is the similarity exponent (> 1/2 so the initial vorticity is locally
    integrable), n_fold the angular symmetry order N (>= 2 so |n| = 1 never
    occurs among active modes), n_max the number of retained harmonics: the
    active modes are n in N * {-n_max, ..., n_max}.
    """

    mu: float
    n_fold: int
    n_max: int = 2

    def __post_init__(self):
        if not self.mu > 0.5:
            raise ConfigError(f"mu = {self.mu} outside the admissible range (1/2, inf)")
        if int(self.n_fold) != self.n_fold or self.n_fold < 2:
            raise ConfigError("n_fold must be an integer >= 2")
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ConfigError("n_max must be a positive integer")

    @property
    def sigma(self) -> float:
        return -1.0 / self.mu

    @property
    def base_vorticity(self) -> float:
        return (2.0 * self.mu - 1.0) / self.mu

    def active_modes(self) -> list[int]:
        return [self.n_fold * k for k in range(-self.n_max, self.n_max + 1)]


@dataclass(frozen=True)
class ModeExponents:
    m_plus: float
    m_minus: float


def exponents(params: FlowParams, n: int) -> ModeExponents:
    return ModeExponents(m_plus=(2.0 + n) * params.mu, m_minus=(2.0 - n) * params.mu)


@dataclass(frozen=True)
class GuardReport:
    ok: bool
    violations: tuple[str, ...] = ()


def guard_invertibility(params: FlowParams, n: int, tol: float = 1e-9) -> GuardReport:
    """Both factors Q + m+- must avoid the pathological exponent m = 1."""
    ex = exponents(params, n)
    bad = []
    if abs(ex.m_plus - 1.0) <= tol:
        bad.append(f"m_plus = (2+{n})*mu = {ex.m_plus} hits 1")
    if abs(ex.m_minus - 1.0) <= tol:
        bad.append(f"m_minus = (2-{n})*mu = {ex.m_minus} hits 1")
    return GuardReport(ok=not bad, violations=tuple(bad))


def _require_guard(params: FlowParams, n: int):
    rep = guard_invertibility(params, n)
    if not rep.ok:
        raise ConfigError("; ".join(rep.violations))


@dataclass(frozen=True)
class NeumannStats:
    terms: int
    tail_norm: float
    last_ratio: float = 0.0


@dataclass(frozen=True, eq=False)
class ModeBundle:
    """Mode solution u plus precomputed derivative-free operator images.

    QQu stores (Q+n)(Q+1-n)u and QQPu stores (Q+n+1)(Q+2-n)Pu; any other
    (Q+a)(Q+b)P^i u follows by linearity, see combo()/combo_p().
    """

    n: int
    u: SpectralMeasure
    Pu: SpectralMeasure
    Qu: SpectralMeasure
    QQu: SpectralMeasure
    QPu: SpectralMeasure
    QQPu: SpectralMeasure
    stats: NeumannStats = field(default=NeumannStats(0, 0.0))

    def scaled(self, c: complex) -> "ModeBundle":
        return ModeBundle(
            self.n, c * self.u, c * self.Pu, c * self.Qu,
            c * self.QQu, c * self.QPu, c * self.QQPu, self.stats,
        )

    def __add__(self, other: "ModeBundle") -> "ModeBundle":
        if other.n != self.n:
            raise ConfigError("cannot add bundles of different modes")
        return ModeBundle(
            self.n, self.u + other.u, self.Pu + other.Pu, self.Qu + other.Qu,
            self.QQu + other.QQu, self.QPu + other.QPu, self.QQPu + other.QQPu,
            self.stats,
        )

    # -- linearity bookkeeping ------------------------------------------

    def Q2u(self) -> SpectralMeasure:
        """Q^2 u from the stored (Q+n)(Q+1-n)u image."""
        n = self.n
        return self.QQu - self.Qu - (n * (1.0 - n)) * self.u

    def Q2Pu(self) -> SpectralMeasure:
        """Q^2 P u from the stored (Q+n+1)(Q+2-n)Pu image."""
        n = self.n
        return self.QQPu - 3.0 * self.QPu - ((n + 1.0) * (2.0 - n)) * self.Pu

    def combo(self, a: float, b: float) -> SpectralMeasure:
        """(Q+a)(Q+b) u."""
        return self.Q2u() + (a + b) * self.Qu + (a * b) * self.u

    def combo_p(self, a: float, b: float) -> SpectralMeasure:
        """(Q+a)(Q+b) P u."""
        return self.Q2Pu() + (a + b) * self.QPu + (a * b) * self.Pu

    def qp_mixed(self, a: float, c: float) -> SpectralMeasure:
        """(Q+a)(P+c) u = QPu + c Qu + a Pu + a c u."""
        return self.QPu + c * self.Qu + a * self.Pu + (a * c) * self.u


def _K(z: float, s: float, m: SpectralMeasure) -> SpectralMeasure:
    return fuchsian.invert(FuchsianParams(z, s), m)


def apply_R_inv(params: FlowParams, n: int, m: SpectralMeasure) -> SpectralMeasure:
    """R^{-1} = K_{0,0} K_{n,-m-} K_{n,-m+} applied to m."""
    _require_guard(params, n)
    ex = exponents(params, n)
    t = _K(float(n), -ex.m_plus, m)
    t = _K(float(n), -ex.m_minus, t)
    return _K(0.0, 0.0, t)


def _er_chain(params: FlowParams, n: int, m: SpectralMeasure) -> SpectralMeasure:
    """E R^{-1} m through the derivative-free composition chain."""
    mu = params.mu
    ex = exponents(params, n)
    a, b = n + 1.0, 2.0 - n
    kp = _K(float(n), -ex.m_plus, m)
    pru = _K(float(n), -ex.m_minus, kp)          # P R^{-1} m
    rinv = _K(0.0, 0.0, pru)                     # R^{-1} m
    km = _K(float(n), -ex.m_minus, m)
    qqp = (
        m
        + (b - ex.m_minus) * km
        + (a - ex.m_plus) * kp
        + ((a - ex.m_plus) * (b - ex.m_minus)) * pru
    )                                            # (Q+n+1)(Q+2-n) P R^{-1} m
    qq = _K(0.0, -2.0, qqp + (2.0 * n * (1.0 - n)) * rinv)
    q1n = _K(float(n), -float(n), qq)            # (Q+1-n) R^{-1} m
    qr = q1n + (n - 1.0) * rinv                  # Q R^{-1} m
    return (2.0 * mu - 1.0) * (qr - pru)


def apply_ER_inv(params: FlowParams, n: int, m: SpectralMeasure) -> SpectralMeasure:
    if n == 0:
        return SpectralMeasure.zero(m.grid)  # Q = P, so E vanishes
    _require_guard(params, n)
    return _er_chain(params, n, m)


def apply_L_inv(
    params: FlowParams,
    n: int,
    m: SpectralMeasure,
    tol_neumann: float = 1e-10,
    k_max: int = 200,
) -> ModeBundle:
    """Invert L_n = R - E by Neumann series and package the image bundle."""
    _require_guard(params, n)
    grid = m.grid
    ex = exponents(params, n)
    a, b = n + 1.0, 2.0 - n

    norm0 = m.l1_delta_norm()
    if norm0 == 0.0:
        z = SpectralMeasure.zero(grid)
        return ModeBundle(n, z, z, z, z, z, z, NeumannStats(0, 0.0))

    s_sum = m
    terms = 1
    tail = 0.0
    last_ratio = 0.0
    if n != 0:
        y = m
        ny_prev = norm0
        bad_streak = 0
        for _ in range(k_max):
            y = _er_chain(params, n, y)
            ny = y.l1_delta_norm()
            ratio = ny / ny_prev if ny_prev > 0 else 0.0
            if ratio >= 1.0:
                bad_streak += 1
                if bad_streak >= 3:
                    raise DivergenceError(
                        f"Neumann series for mode n = {n} is not contracting "
                        f"(norm ratio {ratio:.3f} over 3 consecutive terms)"
                    )
            else:
                bad_streak = 0
            s_sum = s_sum + y
            terms += 1
            ny_prev = ny
            last_ratio = ratio
            if ny < tol_neumann * norm0:
                break
        tail = ny_prev / (1.0 - last_ratio) if last_ratio < 1.0 else ny_prev

    kp = _K(float(n), -ex.m_plus, s_sum)
    pu = _K(float(n), -ex.m_minus, kp)
    u = _K(0.0, 0.0, pu)
    km = _K(float(n), -ex.m_minus, s_sum)
    qpu = kp - ex.m_minus * pu
    qqpu = (
        s_sum
        + (b - ex.m_minus) * km
        + (a - ex.m_plus) * kp
        + ((a - ex.m_plus) * (b - ex.m_minus)) * pu
    )
    qqu = _K(0.0, -2.0, qqpu + (2.0 * n * (1.0 - n)) * u)
    q1nu = _K(float(n), -float(n), qqu)
    qu = q1nu + (n - 1.0) * u
    return ModeBundle(n, u, pu, qu, qqu, qpu, qqpu, NeumannStats(terms, tail, last_ratio))


def mirror_measure(m: SpectralMeasure) -> SpectralMeasure:
    """Reflection-conjugation p -> -p: the transform of complex conjugation
    in physical space."""
    return SpectralMeasure(
        m.grid,
        tuple((-xi, np.conj(w)) for xi, w in m.atoms),
        np.conj(m.density[::-1]),
    )


def mirror_bundle(b: ModeBundle) -> ModeBundle:
    """Bundle of mode -n from the mode +n bundle.

    The numerical regularization of the commutator chains is not exactly
    reflection-covariant (the elimination step breaks the p -> -p symmetry at
    the measure level), so negative modes are DEFINED as mirror images; this
    makes Hermitian data produce exactly real fields.  The stored QQ-type
    images change convention with the sign of n:
        (Q-n)(Q+1+n) = (Q+n)(Q+1-n) - 2n,
        (Q+1-n)(Q+2+n) = (Q+n+1)(Q+2-n) - 2n   (applied to Pu).
    """
    n = b.n
    u = mirror_measure(b.u)
    pu = mirror_measure(b.Pu)
    return ModeBundle(
        n=-n,
        u=u,
        Pu=pu,
        Qu=mirror_measure(b.Qu),
        QQu=mirror_measure(b.QQu) + (-2.0 * n) * u,
        QPu=mirror_measure(b.QPu),
        QQPu=mirror_measure(b.QQPu) + (-2.0 * n) * pu,
        stats=b.stats,
    )


def reconstruct_L_image(params: FlowParams, bundle: ModeBundle) -> SpectralMeasure:
    """L_n u from the stored images alone (no differentiation): R u - E u."""
    mu = params.mu
    n = bundle.n
    ex = exponents(params, n)
    ru = (
        bundle.QQPu
        + (4.0 * mu - 3.0) * bundle.QPu
        + (ex.m_plus * ex.m_minus - (n + 1.0) * (2.0 - n)) * bundle.Pu
    )
    eu = (2.0 * mu - 1.0) * (bundle.Qu - bundle.Pu)
    return ru - eu


def apply_L_forward(params: FlowParams, n: int, m: SpectralMeasure) -> SpectralMeasure:
    """Forward L_n via finite-difference Fuchsian factors; test oracle only."""
    ex = exponents(params, n)
    pm = fuchsian.apply_forward(FuchsianParams(0.0, 0.0), m)
    t = fuchsian.apply_forward(FuchsianParams(float(n), -ex.m_plus), pm)
    ru = fuchsian.apply_forward(FuchsianParams(float(n), -ex.m_minus), t)
    qm = fuchsian.apply_forward(FuchsianParams(float(n), 0.0), m)
    eu = (2.0 * params.mu - 1.0) * (qm - pm)
    return ru - eu


# ---------------------------------------------------------------------------
# probe-based operator norm estimation


def default_probes(grid: PGrid, n: int) -> list[SpectralMeasure]:
    """Deterministic probe set: delta atoms at 0, n, +-p_max/2 plus 4 hats."""
    probes = [SpectralMeasure.delta(grid, 0.0)]
    if n != 0 and abs(n) <= grid.p_max:
        probes.append(SpectralMeasure.delta(grid, float(n)))
    probes.append(SpectralMeasure.delta(grid, grid.p_max / 2.0))
    probes.append(SpectralMeasure.delta(grid, -grid.p_max / 2.0))
    for center, width in ((0.0, 1.0), (1.5, 0.5), (-2.5, 1.0), (grid.p_max / 4.0, 2.0)):
        x = grid.nodes
        hat = np.clip(1.0 - np.abs(x - center) / width, 0.0, None) / width
        probes.append(SpectralMeasure.from_density(grid, hat.astype(np.complex128)))
    return probes


_OPERATOR_TAGS = ("R_inv", "ER_inv", "L_inv", "P_L_inv", "Q_L_inv", "QQ_L_inv")


def estimate_norm(
    op: str,
    params: FlowParams,
    n: int,
    probes: list[SpectralMeasure] | None = None,
    grid: PGrid | None = None,
) -> float:
    """Max output/input norm ratio over the probe set.

    Probe estimates are LOWER bounds on the true operator norm; the published
    inequalities are asymptotic with unspecified constants, so callers should
    check boundedness of sequences rather than specific values.
    """
    if op not in _OPERATOR_TAGS:
        raise ConfigError(f"unknown operator tag {op!r}; expected one of {_OPERATOR_TAGS}")
    if probes is None:
        probes = default_probes(grid or PGrid(), n)
    best = 0.0
    for m in probes:
        nin = m.l1_delta_norm()
        if nin == 0.0:
            continue
        if op == "R_inv":
            out = apply_R_inv(params, n, m).l1_delta_norm()
        elif op == "ER_inv":
            out = apply_ER_inv(params, n, m).l1_delta_norm()
        else:
            bundle = apply_L_inv(params, n, m)
            img = {
                "L_inv": bundle.u,
                "P_L_inv": bundle.Pu,
                "Q_L_inv": bundle.Qu,
                "QQ_L_inv": bundle.QQu,
            }[op]
            out = img.l1_delta_norm()
        best = max(best, out / nin)
    return best


def solve_modes_parallel(fn, modes, max_workers: int | None = None) -> dict:
    """Map fn over mode indices, preserving determinism of the result dict."""
    if max_workers is None or max_workers <= 1 or len(modes) <= 1:
        return {n: fn(n) for n in modes}
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        results = list(pool.map(fn, modes))
    return dict(zip(modes, results))
