"""Chord-Newton corrector for the full nonlinear problem.

The iteration freezes the background linearization as preconditioner: the
residual F is evaluated on the (beta, u) grid, split per u-harmonic,
transformed to spectral measures, and each mode is preconditioned with the
explicit background inverse L_n^{-1}.  The data enters only through the
residual, so a converged state solves the nonlinear problem regardless of
preconditioner quality; preconditioner error only affects the contraction
rate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import GuardViolationError, StagnationError
from .grids import BetaGrid, PGrid
from .linear_solve import VorticityData, check_smallness
from .fields import PhysicalField, SolutionState, residual_F
from .measures import SpectralMeasure, physical_to_spectral
from .modes import FlowParams, apply_L_inv, mirror_bundle, solve_modes_parallel


@dataclass(frozen=True)
class NewtonControls:
    tol_residual: float | None = None   # default 1e-8 * |base vorticity|
    iter_max: int = 12
    lam: float = 1.0
    max_backtracks: int = 4
    stagnation_window: int = 3
    stagnation_factor: float = 0.95     # required reduction over the window
    smallness_ratio: float = 0.05
    tol_neumann: float = 1e-10
    k_max_neumann: int = 200

    def __post_init__(self):
        if self.tol_residual is not None and not self.tol_residual > 0.0:
            raise ValueError("tol_residual must be positive")
        if self.iter_max < 1:
            raise ValueError("iter_max must be >= 1")
        if not (0.0 < self.lam <= 1.0):
            raise ValueError("damping must lie in (0, 1]")


@dataclass
class IterationRecord:
    residual: float
    lam: float
    margins: dict[str, float]


@dataclass
class ConvergenceReport:
    converged: bool
    iterations: list[IterationRecord] = field(default_factory=list)
    final_residual: float = np.inf
    message: str = ""

    def to_json_dict(self) -> dict:
        return {
            "converged": self.converged,
            "final_residual": self.final_residual,
            "message": self.message,
            "iterations": [
                {"residual": r.residual, "lambda": r.lam, "guard_margins": r.margins}
                for r in self.iterations
            ],
        }


def _harmonic_rows(F: PhysicalField, n_fold: int, n_max: int) -> dict[int, np.ndarray]:
    """Per-harmonic residual rows over beta: hat F(beta_j, n) for active n.

    The u nodes cover one fundamental period, so the DFT index m maps to the
    harmonic n = n_fold * m (with negative frequencies in the upper half).
    """
    m_count = F.us.size
    coeffs = np.fft.fft(F.values, axis=1) / m_count
    rows: dict[int, np.ndarray] = {0: coeffs[:, 0]}
    for m in range(1, n_max + 1):
        rows[n_fold * m] = coeffs[:, m]
        rows[-n_fold * m] = coeffs[:, m_count - m]
    return rows


def _precondition(
    params: FlowParams,
    rows: dict[int, np.ndarray],
    bgrid: BetaGrid,
    pgrid: PGrid,
    controls: NewtonControls,
    max_workers: int | None,
):
    """One chord step: increment bundles -L_n^{-1} hat F(., n)."""

    def solve_one(n: int):
        m = physical_to_spectral(rows[n], bgrid, pgrid)
        return apply_L_inv(params, n, -1.0 * m, controls.tol_neumann, controls.k_max_neumann)

    nonneg = [n for n in rows if n >= 0]
    solved = solve_modes_parallel(solve_one, nonneg, max_workers)
    out = dict(solved)
    for n in nonneg:
        if n > 0:
            out[-n] = mirror_bundle(solved[n])
    return out


def solve_nonlinear(
    params: FlowParams,
    vort: VorticityData,
    controls: NewtonControls = NewtonControls(),
    beta_grid: BetaGrid | None = None,
    pgrid: PGrid | None = None,
    u_points: int = 64,
    max_workers: int | None = None,
) -> tuple[SolutionState, ConvergenceReport]:
    """Solve the nonlinear problem for the given vorticity data.

    Starts from the background, iterates chord-Newton corrections with
    lambda backtracking, and stops when the grid sup norm of F falls below
    tol_residual.  Guard violations abort with the last valid state attached
    to the raised error.
    """
    bgrid = beta_grid if beta_grid is not None else BetaGrid()
    pg = pgrid if pgrid is not None else PGrid()
    check_smallness(params, vort, controls.smallness_ratio)
    tol = (
        controls.tol_residual
        if controls.tol_residual is not None
        else 1e-8 * abs(vort.base)
    )

    state = SolutionState(params, vort, (), bgrid, u_points=u_points)
    report = ConvergenceReport(converged=False)

    F, margins = residual_F(state, with_margins=True)
    res = F.sup_norm()
    report.iterations.append(IterationRecord(res, 0.0, margins))
    if res < tol:
        report.converged = True
        report.final_residual = res
        report.message = "background residual already below tolerance"
        return state, report

    lam = controls.lam
    history = [res]
    for it in range(controls.iter_max):
        rows = _harmonic_rows(F, params.n_fold, params.n_max)
        increment = _precondition(params, rows, bgrid, pg, controls, max_workers)

        accepted = False
        lam_try = lam
        for _ in range(controls.max_backtracks + 1):
            coll = {n: b.scaled(lam_try) for n, b in increment.items()}
            candidate = state.with_increment(coll)
            try:
                F_new, margins_new = residual_F(candidate, with_margins=True)
            except GuardViolationError as exc:
                raise GuardViolationError(
                    f"iteration {it + 1}: {exc}", margins=exc.margins, last_state=state
                ) from exc
            res_new = F_new.sup_norm()
            if res_new <= res:
                accepted = True
                break
            lam_try *= 0.5
        if not accepted:
            raise StagnationError(
                f"residual would not decrease after {controls.max_backtracks} "
                f"lambda halvings (residual {res:.3e})",
                last_state=state,
                report=report,
            )

        state, F, res, margins = candidate, F_new, res_new, margins_new
        report.iterations.append(IterationRecord(res, lam_try, margins))
        history.append(res)
        if res < tol:
            report.converged = True
            break
        if (
            len(history) > controls.stagnation_window
            and history[-1] > controls.stagnation_factor * history[-1 - controls.stagnation_window]
        ):
            raise StagnationError(
                f"residual reduction below 5% over {controls.stagnation_window} "
                f"iterations (residual {res:.3e})",
                last_state=state,
                report=report,
            )

    report.final_residual = res
    if not report.converged:
        report.message = f"iteration budget exhausted at residual {res:.3e}"
    else:
        report.message = "converged"
    return state, report


def save_report(report: ConvergenceReport, path):
    with open(path, "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=1)
