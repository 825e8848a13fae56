"""Command-line front end: ``saddleblow <command> --config FILE``.

Commands: classify, flow, mc, blowup-spectrum, lnn, cstable. Each reads a
JSON config, prints its report to stdout and, with ``--out DIR``, also
writes the report and any tables into that directory.

Exit codes: 0 success, 1 I/O or configuration error, 2 domain error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import fields
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

from . import centerstable as cs
from . import lnn
from .blowup import BlowupField, field_batch, linearization_spectrum, multiset_distance, predicted_spectrum
from .errors import DomainError, NumericalFailure
from .flow import FlowConfig, energy_bound, integrate_blowup_flow, integrate_gradient_flow, monte_carlo_avoidance
from .objective import PolynomialObjective, load_objective, objective_from_json
from .sphere import SearchOptions, classify_saddle, find_crit_points

log = logging.getLogger("saddleblow")

EXIT_OK, EXIT_CONFIG, EXIT_DOMAIN, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(Exception):
    """Malformed or unreadable configuration."""


# --- config helpers ------------------------------------------------------------


def _check_keys(data: Mapping[str, Any], allowed: set[str], required: set[str] = frozenset(), where: str = "config"):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    missing = set(required) - set(data)
    if missing:
        raise ConfigError(f"missing keys in {where}: {sorted(missing)}")


def _options(cls, data: Mapping[str, Any] | None, where: str, **overrides):
    data = dict(data or {})
    _check_keys(data, {f.name for f in fields(cls)}, where=where)
    data.update(overrides)
    return cls(**data)


def _objective(spec: Any, base: Path) -> PolynomialObjective:
    """Inline ``{"dim", "terms"}`` or a path relative to the config file."""
    if isinstance(spec, str):
        return load_objective(base / spec)
    return objective_from_json(spec)


def _vector(value: Any, dim: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.shape[0] != dim:
        raise ConfigError(f"{name} must have {dim} entries")
    return arr


def _finite(obj: Any) -> Any:
    """Replace non-finite floats with ``None`` and numpy scalars with Python ones."""
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _finite(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps_report(report: Mapping[str, Any]) -> str:
    return json.dumps(_finite(report), indent=2) + "\n"


def _fmt(x: Any) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return "" if x is None else str(x)


def _csv_text(header: list[str], rows: list[list[Any]]) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(header)
    for row in rows:
        out.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def _flat_csv(report: Mapping[str, Any]) -> str:
    """Scalar entries of a report as a two-column ``key,value`` table."""
    rows = [[k, v] for k, v in _finite(report).items() if not isinstance(v, (dict, list))]
    return _csv_text(["key", "value"], rows)


class Output:
    """Collects the report and side tables of one command."""

    def __init__(self, out_dir: Path | None, fmt: str, name: str):
        self.out_dir = out_dir
        self.fmt = fmt
        self.name = name

    def table(self, filename: str, header: list[str], rows) -> None:
        if self.out_dir is not None:
            (self.out_dir / filename).write_text(_csv_text(header, [list(r) for r in rows]))

    def report(self, report: Mapping[str, Any], table: tuple[list[str], list[list[Any]]] | None = None) -> None:
        if self.fmt == "csv":
            text = _csv_text(*table) if table is not None else _flat_csv(report)
            suffix = "csv"
        else:
            text = dumps_report(report)
            suffix = "json"
        sys.stdout.write(text)
        if self.out_dir is not None:
            (self.out_dir / f"{self.name}.{suffix}").write_text(text)


# --- commands ----------------------------------------------------------------------


def cmd_classify(cfg: Mapping[str, Any], base: Path, args, out: Output) -> None:
    _check_keys(cfg, {"objective", "point", "search", "point_tol"}, {"objective", "point"})
    obj = _objective(cfg["objective"], base)
    point = _vector(cfg["point"], obj.dim, "point")
    opts = _options(SearchOptions, cfg.get("search"), "search", seed=args.seed)
    report = classify_saddle(obj, point, opts, point_tol=float(cfg.get("point_tol", 1e-8)))
    data = report.to_json()
    log.info("k=%d weakly_strict=%s tamed=%s critical points=%d", report.k, report.weakly_strict, report.tamed, len(report.crit_points))
    header = ["value", "morse_index", "nullity", "grad_residual"] + [f"u{j}" for j in range(obj.dim)]
    rows = [[c.value, c.morse_index, c.nullity, c.grad_residual, *c.u] for c in report.crit_points]
    out.table("crit_points.csv", header, rows)
    out.report(data, (header, rows))


def cmd_flow(cfg: Mapping[str, Any], base: Path, args, out: Output) -> None:
    _check_keys(cfg, {"objective", "mode", "point", "center", "r0", "u0", "flow"}, {"objective"})
    obj = _objective(cfg["objective"], base)
    fcfg = _options(FlowConfig, cfg.get("flow"), "flow")
    mode = cfg.get("mode", "gradient")
    if mode == "gradient":
        if "point" not in cfg:
            raise ConfigError("gradient mode needs 'point'")
        w0 = _vector(cfg["point"], obj.dim, "point")
        center = _vector(cfg["center"], obj.dim, "center") if cfg.get("center") is not None else None
        traj = integrate_gradient_flow(obj, w0, fcfg, center)
    elif mode == "blowup":
        if "center" not in cfg or "r0" not in cfg or "u0" not in cfg:
            raise ConfigError("blowup mode needs 'center', 'r0' and 'u0'")
        center = _vector(cfg["center"], obj.dim, "center")
        fld = BlowupField.build(obj, center)
        traj = integrate_blowup_flow(fld, (float(cfg["r0"]), _vector(cfg["u0"], obj.dim, "u0")), fcfg)
    else:
        raise ConfigError(f"unknown flow mode {mode!r}")
    arc2, bound = energy_bound(traj)
    report: dict[str, Any] = {
        "mode": mode,
        "termination": traj.termination.value,
        "n_samples": int(len(traj.t)),
        "t_final": float(traj.t[-1]),
        "final_state": traj.states[-1].tolist(),
        "final_value": float(traj.values[-1]),
        "arc_length": traj.arc_length,
        "energy_arc_squared": arc2,
        "energy_bound": bound,
    }
    if mode == "blowup":
        report["max_unit_defect"] = float(np.max(np.abs(np.linalg.norm(traj.states[:, 1:], axis=1) - 1.0)))
    log.info("flow %s after t=%.6g", traj.termination.value, traj.t[-1])
    out.table("trajectory.csv", traj.columns(), traj.rows())
    out.report(report)


def cmd_mc(cfg: Mapping[str, Any], base: Path, args, out: Output) -> None:
    _check_keys(cfg, {"objective", "point", "radius", "n", "flow"}, {"objective", "point", "radius", "n"})
    obj = _objective(cfg["objective"], base)
    point = _vector(cfg["point"], obj.dim, "point")
    fcfg = _options(FlowConfig, cfg.get("flow"), "flow")
    rep = monte_carlo_avoidance(obj, point, float(cfg["radius"]), int(cfg["n"]), fcfg, seed=args.seed, threads=args.threads)
    log.info("escaped %d of %d", rep.n_escaped, rep.n_total)
    out.report(rep.to_json())


def cmd_blowup_spectrum(cfg: Mapping[str, Any], base: Path, args, out: Output) -> None:
    _check_keys(cfg, {"objective", "point", "search", "radii", "n_dirs"}, {"objective", "point"})
    obj = _objective(cfg["objective"], base)
    point = _vector(cfg["point"], obj.dim, "point")
    opts = _options(SearchOptions, cfg.get("search"), "search", seed=args.seed)
    fld = BlowupField.build(obj, point, seed=args.seed)
    crits = find_crit_points(fld.P, opts)
    entries = []
    rows = []
    for c in crits:
        measured = linearization_spectrum(fld, c)
        predicted = predicted_spectrum(fld, c)
        err = multiset_distance(measured, predicted)
        radius = float(np.max(np.abs(predicted)))
        entries.append(
            {
                "u": c.u.tolist(),
                "predicted": predicted.real.tolist(),
                "measured_real": measured.real.tolist(),
                "measured_imag": measured.imag.tolist(),
                "error": err,
                "tolerance": 1e-5 * (1.0 + radius),
            }
        )
        rows.append([err, 1e-5 * (1.0 + radius), *c.u])
    # extension bound: sup_u |X(r, u) - (0, grad p(u))| over sampled directions
    radii = np.asarray(cfg.get("radii", np.logspace(-5, -2, 7).tolist()), dtype=float)
    rng = np.random.default_rng(args.seed)
    U = rng.standard_normal((int(cfg.get("n_dirs", 500)), obj.dim))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    base_field = field_batch(fld, np.zeros(len(U)), U)
    sups = [float(np.max(np.linalg.norm(field_batch(fld, np.full(len(U), r), U) - base_field, axis=1))) for r in radii]
    slope = float(np.polyfit(np.log(radii), np.log(np.maximum(sups, 1e-300)), 1)[0])
    report = {
        "k": fld.k,
        "n_crit_points": len(crits),
        "max_error": max((e["error"] for e in entries), default=0.0),
        "all_within_tolerance": all(e["error"] <= e["tolerance"] for e in entries),
        "spectra": entries,
        "extension_radii": radii.tolist(),
        "extension_sup": sups,
        "extension_slope": slope,
    }
    header = ["error", "tolerance"] + [f"u{j}" for j in range(obj.dim)]
    out.table("spectra.csv", header, rows)
    out.report(report, (header, rows))


def _weights(prob: lnn.LNNProblem, spec: Any, seed: int) -> list[np.ndarray]:
    """``"zero"``, explicit blocks, or ``{"random": true, "zero_blocks": [...]}``."""
    if spec is None or spec == "zero":
        return prob.zeros()
    if isinstance(spec, Mapping):
        _check_keys(spec, {"random", "zero_blocks"}, where="weights")
        rng = np.random.default_rng(seed)
        W = [rng.standard_normal(s) for s in prob.shapes]
        for i in spec.get("zero_blocks", []):
            W[int(i)] = np.zeros(prob.shapes[int(i)])
        return W
    return lnn.check_weights(prob, [np.asarray(w, dtype=float) for w in spec])


def cmd_lnn(cfg: Mapping[str, Any], base: Path, args, out: Output) -> None:
    _check_keys(cfg, {"problem", "weights", "search"}, {"problem"})
    prob_spec = cfg["problem"]
    prob = lnn.load_problem(base / prob_spec) if isinstance(prob_spec, str) else lnn.LNNProblem.from_json(prob_spec)
    W = _weights(prob, cfg.get("weights"), args.seed)
    opts = _options(SearchOptions, cfg.get("search"), "search", seed=args.seed)
    zeta = lnn.zeta(W)
    kappa = lnn.kappa(prob, W, seed=args.seed)
    report: dict[str, Any] = {
        "dims": list(prob.dims),
        "loss": lnn.loss(prob, W),
        "gradient_norm": float(np.linalg.norm(lnn.flatten(prob, lnn.loss_gradient(prob, W)))),
        "zeta": zeta,
        "kappa": kappa,
        "zero_blocks": lnn.zero_blocks(W),
    }
    rep = lnn.certify_weakly_strict(prob, W, opts)
    report["trace_check"] = lnn.trace_hessian_check(rep.leading, seed=args.seed)
    report["trace_scale"] = 1e-8 * (1.0 + rep.leading.coef_norm)
    report["certification"] = {k: v for k, v in rep.to_json().items() if k not in ("crit_points", "leading_poly")}
    log.info("zeta=%d kappa=%d weakly_strict=%s", zeta, kappa, rep.weakly_strict)
    out.report(report)


def _perturbation(spec: Any, m: int) -> Callable[[np.ndarray], np.ndarray]:
    if spec is None:
        return lambda Z: np.zeros_like(Z)
    _check_keys(spec, {"coef", "target", "source"}, {"coef", "target", "source"}, where="perturbation")
    target, source = int(spec["target"]), int(spec["source"])
    if not (0 <= target < m and 0 <= source < m):
        raise ConfigError("perturbation indices out of range")
    return cs.quadratic_perturbation(float(spec["coef"]), target, source)


def cmd_cstable(cfg: Mapping[str, Any], base: Path, args, out: Output) -> None:
    _check_keys(
        cfg,
        {"T", "perturbation", "bump_scale", "half_width", "n_nodes", "tol", "max_iter", "test_points", "offset", "n_max"},
        {"T"},
    )
    T = np.asarray(cfg["T"], dtype=float)
    h = _perturbation(cfg.get("perturbation"), T.shape[0])
    f, _ = cs.bump_localize(h, T, float(cfg.get("bump_scale", 1.0)))
    prob = cs.GraphProblem.build(
        T, f, half_width=float(cfg.get("half_width", 2.5)), n_nodes=int(cfg.get("n_nodes", 101)), seed=args.seed
    )
    res = cs.solve_center_stable(prob, tol=float(cfg.get("tol", 1e-11)), max_iter=int(cfg.get("max_iter", 300)))
    sp = prob.splitting
    g = res.graph
    n_max = int(cfg.get("n_max", 50))
    offset = float(cfg.get("offset", 0.1))
    pts = cfg.get("test_points", [[1.0] * sp.n1])
    table = []
    for x in pts:
        x = _vector(x, sp.n1, "test point")
        on = cs.graph_point(prob, g, x)
        off = on + sp.join(np.zeros(sp.n1), np.full(sp.n2, offset))[0]
        for label, z in (("graph", on), ("offset", off)):
            mem = cs.membership_test(prob, g, z, n_max=n_max)
            table.append([label, *z, mem.growth_max, mem.bound, mem.on_graph, mem.exit_step])
    report = {
        "mu": sp.mu,
        "theta": sp.theta,
        "rho": sp.rho,
        "n_trunc": sp.n_trunc,
        "eta_budget": cs.eta_budget(sp),
        "lip_dev": prob.lip_dev,
        "contraction_bound": res.bound,
        "iterations": res.iterations,
        "distances": res.distances,
        "ratios": res.ratios,
        "max_ratio": res.max_ratio,
        "lipschitz": cs.graph_lipschitz(prob, g),
        "g_at_zero": g(np.zeros((1, sp.n1)))[0].tolist(),
        "max_abs_g": float(np.max(np.abs(g.values))),
        "membership": [
            {"kind": r[0], "point": list(r[1 : 1 + sp.dim]), "growth_max": r[-4], "bound": r[-3], "on_graph": r[-2], "exit_step": r[-1]}
            for r in table
        ],
    }
    log.info("graph transform converged in %d iterations, max ratio %.4f", res.iterations, res.max_ratio)
    header_nodes = [f"x{j}" for j in range(sp.n1)] + [f"y{j}" for j in range(sp.n2)]
    out.table("graph.csv", header_nodes, g.to_csv_rows())
    out.table("contraction.csv", ["iteration", "distance"], [[i + 1, d] for i, d in enumerate(res.distances)])
    mem_header = ["kind"] + [f"z{j}" for j in range(sp.dim)] + ["growth_max", "bound", "on_graph", "exit_step"]
    out.table("membership.csv", mem_header, table)
    out.report(report)


COMMANDS = {
    "classify": cmd_classify,
    "flow": cmd_flow,
    "mc": cmd_mc,
    "blowup-spectrum": cmd_blowup_spectrum,
    "lnn": cmd_lnn,
    "cstable": cmd_cstable,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="saddleblow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="JSON config file")
        p.add_argument("--seed", type=int, default=0, help="seed for every random choice")
        p.add_argument("--out", type=Path, default=None, help="directory for reports and tables")
        p.add_argument("--threads", type=int, default=1, help="worker cap for parallel stages")
        p.add_argument("--format", choices=("json", "csv"), default="json", help="report format")
        p.add_argument("--log-level", default="WARNING", help="logging level on stderr")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.seed < 0 or args.threads < 1:
        print("error: seed must be nonnegative and threads positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        config_path = args.config.resolve()
        cfg = json.loads(config_path.read_text())
        out_dir = None
        if args.out is not None:
            out_dir = args.out.resolve()
            out_dir.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, config_path.parent, args, Output(out_dir, args.format, args.command))
    except DomainError as exc:
        print(f"domain error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, json.JSONDecodeError, ConfigError, ValueError, KeyError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
