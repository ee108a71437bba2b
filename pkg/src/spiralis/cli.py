"""Command line interface: configuration, orchestration, export.

All subcommands are non-interactive and write machine-readable artifacts
(JSON reports, CSV tables, SVG polyline plots).  Exit codes: 0 ok, 2 for
configuration errors, 3 for solution-guard violations, 4 for divergence or
stagnation.  Every artifact carries the software version and a hash of the
effective configuration.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__, diagnostics, fields, linear_solve, newton, verify
from .errors import ConfigError, SpiralisError
from .grids import BetaGrid, PGrid
from .linear_solve import InitialVorticity, VorticityData
from .modes import FlowParams


def _mkdir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _meta(cfg: dict, command: str) -> dict:
    return {"version": __version__, "config_hash": _config_hash(cfg), "command": command}


def _write_json(path, payload: dict, cfg: dict, command: str):
    payload = dict(payload)
    payload["meta"] = _meta(cfg, command)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)


def _csv_header(cfg: dict, command: str) -> str:
    m = _meta(cfg, command)
    return f"# spiralis {m['version']} config={m['config_hash']} command={m['command']}\n"


def _write_csv(path, header_cols, rows, cfg, command):
    with open(path, "w") as fh:
        fh.write(_csv_header(cfg, command))
        fh.write(",".join(header_cols) + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.12g}" for v in row) + "\n")


def _write_svg(path, polylines, size: int = 640, margin: float = 0.05):
    """Minimal standalone SVG: one path per polyline plus an axis box."""
    pts = np.concatenate([pl.xy for pl in polylines if pl.xy.size])
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    pad = margin * span.max()
    lo, hi = lo - pad, hi + pad
    scale = size / (hi - lo).max()

    def map_xy(xy):
        q = (xy - lo) * scale
        return np.stack([q[:, 0], size - q[:, 1]], axis=1)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect x="0" y="0" width="{size}" height="{size}" fill="white" '
        f'stroke="black" stroke-width="1"/>',
    ]
    for k, pl in enumerate(polylines):
        if not pl.xy.size:
            continue
        q = map_xy(pl.xy)
        d = "M " + " L ".join(f"{x:.2f} {y:.2f}" for x, y in q)
        parts.append(
            f'<path d="{d}" fill="none" stroke="{colors[k % len(colors)]}" '
            f'stroke-width="0.8"/>'
        )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))


# ---------------------------------------------------------------------------
# configuration assembly


def _load_config(args) -> dict:
    cfg = {}
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
    for key in (
        "mu", "n_fold", "n_max", "p_max", "h_p", "b_max", "h_beta", "taper",
        "u_points", "threads", "tol_residual", "iter_max", "damping", "out",
        "format",
    ):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "omega", None) is not None:
        cfg["omega"] = args.omega
    return cfg


def _params(cfg: dict) -> FlowParams:
    if "mu" not in cfg:
        raise ConfigError("mu is required (flag --mu or config file)")
    n_fold = cfg.get("n_fold", "auto")
    if n_fold == "auto":
        rec = linear_solve.recommend_N(
            float(cfg["mu"]),
            int(cfg.get("n_max", 2)),
            int(cfg.get("n_cap", 64)),
            float(cfg.get("contraction_target", 0.5)),
            _pgrid(cfg),
        )
        if not rec.ok:
            raise ConfigError(
                f"no symmetry order up to the cap reaches the contraction target "
                f"(best factor {rec.factor:.3f})"
            )
        n_fold = rec.n_fold
    return FlowParams(float(cfg["mu"]), int(n_fold), int(cfg.get("n_max", 2)))


def _pgrid(cfg: dict) -> PGrid:
    return PGrid(float(cfg.get("p_max", 40.0)), float(cfg.get("h_p", 0.02)))


def _bgrid(cfg: dict) -> BetaGrid:
    return BetaGrid(
        float(cfg.get("b_max", 200.0)),
        float(cfg.get("h_beta", 0.05)),
        float(cfg.get("taper", 0.1)),
    )


def _vorticity(cfg: dict, params: FlowParams) -> tuple[VorticityData, float]:
    """Vorticity data in the normalized frame plus the strength factor.

    A base value differing from (2mu-1)/mu is absorbed into the vortex
    strength scaling: solve with data/s at the normalized base, reconstruct
    at strength s."""
    if "omega" not in cfg:
        return VorticityData.background(params), 1.0
    raw = cfg["omega"]
    data = linear_solve.load_vorticity(raw if isinstance(raw, str) else json.dumps(raw))
    if data.n_fold != params.n_fold:
        raise ConfigError(
            f"vorticity data has {data.n_fold}-fold symmetry, parameters use "
            f"{params.n_fold}"
        )
    nominal = params.base_vorticity
    strength = data.base / nominal
    if strength <= 0.0:
        raise ConfigError(
            "vorticity base and the similarity background must have the same "
            "sign; negative strengths are reflected solutions (scale at the "
            "data level instead)"
        )
    normalized = data.scaled(1.0 / strength)
    return normalized, strength


def _out_dir(cfg) -> str:
    if "out" not in cfg:
        raise ConfigError("--out DIR is required for commands that write artifacts")
    return _mkdir(cfg["out"])


# ---------------------------------------------------------------------------
# subcommands


def cmd_verify_operators(args):
    cfg = _load_config(args)
    mu = float(cfg.get("mu", 1.0))
    n_fold = cfg.get("n_fold", 8)
    n_fold = 8 if n_fold == "auto" else int(n_fold)
    report = verify.run_verification(mu, n_fold, int(cfg.get("n_max", 2)), _pgrid(cfg))
    if cfg.get("out"):
        _write_json(os.path.join(_out_dir(cfg), "verify_operators.json"), report, cfg,
                    "verify-operators")
    print(json.dumps(report, indent=1))
    return 0 if report["all_passed"] else 1


def cmd_recommend_n(args):
    cfg = _load_config(args)
    if "mu" not in cfg:
        raise ConfigError("mu is required")
    rec = linear_solve.recommend_N(
        float(cfg["mu"]),
        int(cfg.get("n_max", 2)),
        int(getattr(args, "n_cap", None) or cfg.get("n_cap", 64)),
        float(getattr(args, "target", None) or cfg.get("contraction_target", 0.5)),
        _pgrid(cfg),
    )
    payload = {
        "ok": rec.ok,
        "n_fold": rec.n_fold,
        "contraction_factor": rec.factor,
        "tried": {str(k): v for k, v in rec.tried.items()},
    }
    print(json.dumps(payload, indent=1))
    if cfg.get("out"):
        _write_json(os.path.join(_out_dir(cfg), "recommend_n.json"), payload, cfg, "recommend-n")
    return 0 if rec.ok else 4


def cmd_solve_linear(args):
    cfg = _load_config(args)
    params = _params(cfg)
    vort, strength = _vorticity(cfg, params)
    out = _out_dir(cfg)
    bundles = linear_solve.solve_linearized(
        params, vort, _pgrid(cfg), max_workers=cfg.get("threads")
    )
    state = fields.SolutionState(
        params, vort, (bundles,), _bgrid(cfg),
        u_points=int(cfg.get("u_points", 256)), strength=strength,
    )
    fields.save_state(state, os.path.join(out, "state.json"))
    profile = linear_solve.initial_vorticity(params, bundles, vort)
    profile = linear_solve.scale_solution(strength, vort, profile)[1] if strength != 1.0 else profile
    _write_json(os.path.join(out, "initial_data.json"), profile.to_json_dict(), cfg, "solve-linear")
    print(json.dumps({"state": "state.json", "modes": sorted(bundles)}, indent=1))
    return 0


def cmd_solve(args):
    cfg = _load_config(args)
    params = _params(cfg)
    vort, strength = _vorticity(cfg, params)
    out = _out_dir(cfg)
    controls = newton.NewtonControls(
        tol_residual=cfg.get("tol_residual"),
        iter_max=int(cfg.get("iter_max", 12)),
        lam=float(cfg.get("damping", 1.0)),
    )
    state, report = newton.solve_nonlinear(
        params, vort, controls, _bgrid(cfg), _pgrid(cfg),
        u_points=int(cfg.get("u_points", 64)), max_workers=cfg.get("threads"),
    )
    if strength != 1.0:
        state = fields.scaled_state(state, strength)
    fields.save_state(state, os.path.join(out, "state.json"))
    _write_json(os.path.join(out, "convergence.json"), report.to_json_dict(), cfg, "solve")
    print(json.dumps(report.to_json_dict()["iterations"], indent=1))
    return 0


def _state_from_args(cfg, args) -> fields.SolutionState:
    if getattr(args, "state", None):
        return fields.load_state(args.state)
    params = _params(cfg)
    vort, strength = _vorticity(cfg, params)
    return fields.SolutionState(
        params, vort, (), _bgrid(cfg), u_points=int(cfg.get("u_points", 256)),
        strength=strength,
    )


def cmd_initial_data(args):
    cfg = _load_config(args)
    state = _state_from_args(cfg, args)
    bundles = state.mode_bundles()
    if not bundles:
        bundles = linear_solve.solve_linearized(
            state.params, state.vort, _pgrid(cfg), max_workers=cfg.get("threads")
        )
    profile = linear_solve.initial_vorticity(state.params, bundles, state.vort)
    if state.strength != 1.0:
        profile = linear_solve.scale_solution(state.strength, state.vort, profile)[1]
    payload = profile.to_json_dict()
    print(json.dumps(payload, indent=1))
    if cfg.get("out"):
        _write_json(os.path.join(_out_dir(cfg), "initial_data.json"), payload, cfg, "initial-data")
    return 0


def cmd_match_initial_data(args):
    cfg = _load_config(args)
    params = _params(cfg)
    with open(args.target) as fh:
        target = InitialVorticity.from_json_dict(json.load(fh))
    base_prof = linear_solve.base_initial_vorticity(params)
    strength = target.base / base_prof
    if strength <= 0:
        raise ConfigError("target base must have the sign of the background profile")
    normalized = InitialVorticity(
        target.n_fold, base_prof, {n: c / strength for n, c in target.coeffs.items()}
    )
    vort = linear_solve.invert_initial_map(
        params, normalized, grid=_pgrid(cfg), max_workers=cfg.get("threads")
    )
    recovered = vort.scaled(strength)
    payload = recovered.to_json_dict()
    print(json.dumps(payload, indent=1))
    if cfg.get("out"):
        _write_json(os.path.join(_out_dir(cfg), "omega.json"), payload, cfg, "match-initial-data")
    return 0


def cmd_trace(args):
    cfg = _load_config(args)
    state = _state_from_args(cfg, args)
    out = _out_dir(cfg)
    u0_list = [float(x) for x in args.u0.split(",")] if args.u0 else [
        2.0 * np.pi * k / state.params.n_fold for k in range(state.params.n_fold)
    ]
    beta_range = (float(args.beta_min), float(args.beta_max))
    lines = []
    for k, u0 in enumerate(u0_list):
        pl = fields.trace_streamline(state, u0, beta_range, t=args.time, step=float(args.step))
        lines.append(pl)
        rows = np.column_stack([pl.beta, pl.xy[:, 0], pl.xy[:, 1], pl.vort])
        _write_csv(
            os.path.join(out, f"streamline_{k:02d}.csv"),
            ["beta", "x", "y", "omega" if args.time is not None else "h"],
            rows, cfg, "trace",
        )
    fmt = cfg.get("format", "svg")
    if fmt in ("svg", None):
        _write_svg(os.path.join(out, "streamlines.svg"), lines)
    print(json.dumps({"streamlines": len(lines),
                      "truncated": [pl.truncated for pl in lines]}, indent=1))
    return 0


def cmd_fields(args):
    cfg = _load_config(args)
    state = _state_from_args(cfg, args)
    out = _out_dir(cfg)
    betas = state.beta_grid.positive_nodes
    if args.beta_max:
        betas = betas[betas <= float(args.beta_max)]
    betas = betas[:: max(1, int(args.stride))]
    us = state.u_period_nodes()
    f = fields.base_fields(state, betas, us)
    from .fields import _algebra, guard_check  # internal reuse

    margins = guard_check(f)
    alg = _algebra(state, f, us, paired=False)
    mu = state.params.mu
    dumps = {
        "psi": f["psi"], "dtb_psi": f["b"], "dtU_psi": f["U1"],
        "g_U": alg["gU"], "g_u": alg["gu"], "W": alg["W"],
        "qv": alg["qv"], "oc": alg["oc"], "rad": np.sqrt(-f["b"] / mu),
        "residual_F": alg["F"],
    }
    for name, arr in dumps.items():
        rows = [np.concatenate(([b], arr[i])) for i, b in enumerate(betas)]
        _write_csv(
            os.path.join(out, f"field_{name}.csv"),
            ["beta"] + [f"u={u:.6f}" for u in us],
            rows, cfg, "fields",
        )
    _write_json(
        os.path.join(out, "fields_meta.json"),
        {
            "betas": [float(betas[0]), float(betas[-1]), len(betas)],
            "u_points": len(us),
            "guard_margins": margins,
            "fields": sorted(dumps),
        },
        cfg, "fields",
    )
    print(json.dumps({"fields": sorted(dumps), "guard_margins": margins}, indent=1))
    return 0


def cmd_diagnose(args):
    cfg = _load_config(args)
    state = _state_from_args(cfg, args)
    out = _out_dir(cfg)
    payload: dict = {}

    line = fields.trace_streamline(state, 0.0, (np.pi, 44.0 * np.pi), step=0.02)
    fit = diagnostics.fit_spiral_exponent(line)
    payload["spiral_fit"] = {
        "exponent": fit.exponent,
        "expected": -state.params.mu,
        "window": list(fit.beta_window),
        "residual": fit.residual,
    }

    family = [
        fields.trace_streamline(
            state, 2.0 * np.pi * k / state.params.n_fold, (2.0 * np.pi, 20.0 * np.pi),
            step=0.02,
        )
        for k in range(state.params.n_fold)
    ]
    report = diagnostics.detect_intersections(family)
    payload["intersections"] = {"count": len(report.hits), "tol": report.tol}

    betas = [4.0 * np.pi, 8.0 * np.pi, 16.0 * np.pi, 32.0 * np.pi]
    series = diagnostics.stratification_ratio(state, 0.0, betas)
    payload["stratification"] = [[b, r] for b, r in series]

    n_list = [state.params.n_fold * k for k in range(1, 5)]
    decay = diagnostics.decay_report(state.params, n_list, _pgrid(cfg))
    payload["decay"] = {
        "rows": [
            {"n": r.n, "L_inv": r.l_inv, "PL_inv": r.pl_inv,
             "QL_inv": r.ql_inv, "QQL_inv": r.qql_inv}
            for r in decay.rows
        ],
        "flagged": list(decay.flagged),
    }
    _write_json(os.path.join(out, "diagnostics.json"), payload, cfg, "diagnose")
    if cfg.get("format") == "csv":
        _write_csv(
            os.path.join(out, "stratification.csv"), ["beta", "ratio"],
            [list(x) for x in series], cfg, "diagnose",
        )
    print(json.dumps(payload, indent=1))
    return 0


# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--mu", type=float, help="similarity exponent (> 1/2)")
    common.add_argument("--n-fold", dest="n_fold", help="symmetry order N or 'auto'")
    common.add_argument("--n-max", dest="n_max", type=int, help="retained harmonics")
    common.add_argument("--omega", help="vorticity data: JSON path or inline JSON")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="worker pool size")
    common.add_argument("--format", choices=["json", "csv", "svg"], help="extra export format")
    common.add_argument("--p-max", dest="p_max", type=float)
    common.add_argument("--h-p", dest="h_p", type=float)
    common.add_argument("--b-max", dest="b_max", type=float)
    common.add_argument("--h-beta", dest="h_beta", type=float)
    common.add_argument("--taper", type=float)
    common.add_argument("--u-points", dest="u_points", type=int)

    ap = argparse.ArgumentParser(
        prog="spiralis",
        description="Self-similar 2d Euler flows with algebraically spiraling vorticity",
    )
    ap.add_argument("--version", action="version", version=f"spiralis {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("verify-operators", parents=[common]).set_defaults(fn=cmd_verify_operators)

    p = sub.add_parser("recommend-n", parents=[common])
    p.add_argument("--n-cap", type=int, default=None)
    p.add_argument("--target", type=float, default=None, help="contraction target in (0,1)")
    p.set_defaults(fn=cmd_recommend_n)

    sub.add_parser("solve-linear", parents=[common]).set_defaults(fn=cmd_solve_linear)

    p = sub.add_parser("solve", parents=[common])
    p.add_argument("--tol-residual", dest="tol_residual", type=float)
    p.add_argument("--iter-max", dest="iter_max", type=int)
    p.add_argument("--damping", type=float)
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("initial-data", parents=[common])
    p.add_argument("--state", help="solution state JSON")
    p.set_defaults(fn=cmd_initial_data)

    p = sub.add_parser("match-initial-data", parents=[common])
    p.add_argument("--target", required=True, help="target initial profile JSON")
    p.set_defaults(fn=cmd_match_initial_data)

    p = sub.add_parser("trace", parents=[common])
    p.add_argument("--state", help="solution state JSON")
    p.add_argument("--u0", help="comma-separated streamline labels")
    p.add_argument("--beta-min", default=np.pi)
    p.add_argument("--beta-max", default=40.0 * np.pi)
    p.add_argument("--step", default=0.05)
    p.add_argument("--time", type=float, default=None)
    p.set_defaults(fn=cmd_trace)

    p = sub.add_parser("fields", parents=[common])
    p.add_argument("--state", help="solution state JSON")
    p.add_argument("--beta-max", dest="beta_max", type=float, default=None)
    p.add_argument("--stride", default=8)
    p.set_defaults(fn=cmd_fields)

    p = sub.add_parser("diagnose", parents=[common])
    p.add_argument("--state", help="solution state JSON")
    p.set_defaults(fn=cmd_diagnose)
    return ap


def main(argv=None) -> int:
    ap = _build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except SpiralisError as exc:
        print(json.dumps({"error": {
            "type": type(exc).__name__,
            "message": str(exc),
            "exit_code": exc.exit_code,
        }}))
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
