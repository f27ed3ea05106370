"""Command-line experiment runner.

Every command prints a sorted-key JSON summary on stdout and, with ``--out``,
also writes ``summary.json`` plus command-specific CSV tables into that
directory. Exit status is 0 on success, 2 when a computed verdict is negative
(a cone membership ``out``, a dichotomy violation, a failed structure check)
and 1 when the computation itself failed.

CSV columns
-----------
dichotomy  ``samples.csv``: radius, lambda_i, nu_i, m1, m2
hprofile   ``profile.csv``: r, h, count
solve      ``history.csv``: iteration, residual_inf
verify     ``cns.csv``: lambda_i, left, right, margin
gauduchon  ``history.csv`` as for solve
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import scipy.fft as sfft

from . import conegeo, estimates
from .errors import ConfigInvalid, HypothesisFailed, LabError
from .hermgeo import MetricField, SpectralGrid, write_field
from .solver import ChiSpec, ProblemSpec, SolverOptions, gauduchon_problem, manufacture, solve
from .symfun import OperatorSpec, check_structure

OP_ALIASES = {
    "logrho": "log_rho_k",
    "log_rho_k": "log_rho_k",
    "sigmak": "sigma_k_root",
    "sigma_k_root": "sigma_k_root",
    "quotient": "sigma_quotient",
    "sigma_quotient": "sigma_quotient",
    "ratio": "sigma_k_over_km1",
    "sigma_k_over_km1": "sigma_k_over_km1",
    "arctan": "sum_arctan",
    "sum_arctan": "sum_arctan",
}

EXIT_OK, EXIT_ERROR, EXIT_VERDICT = 0, 1, 2


# ---------------------------------------------------------------------------
# configuration


def load_schema() -> dict:
    text = resources.files("hessianlab").joinpath("config.schema.json").read_text()
    return json.loads(text)


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigInvalid(f"{where}: {exc.message}") from exc


def make_operator(family: str, n: int, k: int | None = None, l: int | None = None) -> OperatorSpec:
    try:
        fam = OP_ALIASES[family]
    except KeyError:
        raise ConfigInvalid(f"unknown operator {family!r}") from None
    try:
        if fam == "sum_arctan":
            return OperatorSpec.sum_arctan(n)
        if fam == "sigma_quotient":
            return OperatorSpec.sigma_quotient(n, k, 0 if l is None else l)
        if fam == "sigma_k_over_km1":
            return OperatorSpec.sigma_k_over_km1(n, k)
        return getattr(OperatorSpec, fam)(n, 1 if k is None else k)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(str(exc)) from exc


def eval_expression(expr, grid: SpectralGrid) -> np.ndarray:
    """A number, or {"terms": [{"amp": a, "factors": [{"fn": "cos"|"sin", "k": [...]}]}]}.

    Each term is amp * prod fn(2 pi k . x) with x ordered (x1, y1, x2, y2, ...).
    """
    if isinstance(expr, (int, float)):
        return np.full(grid.shape, float(expr))
    out = np.zeros(grid.shape)
    coords = [grid.coord(a) for a in range(2 * grid.n)]
    for term in expr["terms"]:
        val = np.full(grid.shape, float(term["amp"]))
        for fac in term.get("factors", []):
            k = fac["k"]
            if len(k) != 2 * grid.n:
                raise ConfigInvalid(f"wave vector {k} needs {2 * grid.n} entries")
            phase = sum(2 * math.pi * kk * c for kk, c in zip(k, coords) if kk)
            val = val * (np.cos(phase) if fac["fn"] == "cos" else np.sin(phase))
        out = out + val
    return out


def _constant_metric(grid: SpectralGrid, spec) -> MetricField:
    if spec in (None, "identity") or spec.get("kind") == "identity":
        return MetricField.flat(grid)
    vals = np.asarray(spec["values"], dtype=float)
    if not np.all(vals > 0):
        raise ConfigInvalid("omega0 diagonal must be positive")
    g = np.broadcast_to(np.diag(vals).astype(complex), grid.shape + (grid.n, grid.n)).copy()
    return MetricField(grid, g)


def build_problem(cfg: dict):
    """Return (problem, u_star or None) from a validated config."""
    missing = [k for k in ("dimension", "resolution", "chi", "psi") if k not in cfg]
    if missing:
        raise ConfigInvalid(f"problem config lacks {', '.join(missing)}")
    n, m = cfg["dimension"], cfg["resolution"]
    grid = SpectralGrid(n, m)
    mcfg = cfg.get("metric", {"kind": "flat"})
    metric = MetricField.flat(grid) if mcfg["kind"] == "flat" else MetricField.conformal(grid, eval_expression(mcfg["phi"], grid))
    ccfg = cfg["chi"]
    psi_cfg = cfg["psi"]
    norm = cfg.get("normalization")
    if ccfg["kind"] == "gauduchon":
        if psi_cfg["kind"] != "gauduchon":
            raise ConfigInvalid("a gauduchon chi needs psi of kind gauduchon")
        h = eval_expression(psi_cfg["h"], grid)
        problem = gauduchon_problem(grid, metric, _constant_metric(grid, ccfg.get("omega0")), h, ccfg.get("c", 1.0), norm or "sup_zero")
        return problem, None
    op_cfg = cfg["operator"]
    op = make_operator(op_cfg["family"], n, op_cfg.get("k"), op_cfg.get("l"))
    X0 = np.eye(n) if ccfg.get("value", "identity") == "identity" else np.asarray(ccfg["value"], dtype=float)
    chi = ChiSpec.constant(X0)
    base = ProblemSpec(grid, metric, op, chi, None, norm or "mean_zero")
    if psi_cfg["kind"] == "manufactured":
        u_star = eval_expression(psi_cfg["u_star"], grid)
        return base.with_psi(manufacture(base, u_star)), u_star
    if psi_cfg["kind"] == "expression":
        return base.with_psi(eval_expression(psi_cfg["field"], grid)), None
    raise ConfigInvalid(f"psi kind {psi_cfg['kind']!r} needs a gauduchon chi")


def solver_options(cfg: dict) -> SolverOptions:
    tol = cfg.get("tolerances", {})
    return SolverOptions(**tol)


# ---------------------------------------------------------------------------
# output helpers


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def dumps(summary: dict) -> str:
    return json.dumps(_clean(summary), sort_keys=True, indent=2)


def _write_summary(out: Path | None, summary: dict) -> None:
    text = dumps(summary)
    print(text)
    if out is not None:
        (out / "summary.json").write_text(text + "\n")


def _parse_vec(text: str | None):
    if text is None:
        return None
    try:
        return np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise ConfigInvalid(f"cannot parse vector {text!r}") from None


def _level_set(args, cfg) -> conegeo.LevelSetHandle:
    p = {**cfg.get("level_set", {}), **{k: v for k, v in vars(args).items() if v is not None}}
    if "op" not in p or "n" not in p:
        raise ConfigInvalid("an operator (--op) and dimension (--n) are required")
    op = make_operator(p["op"], int(p["n"]), p.get("k"), p.get("l"))
    return conegeo.LevelSetHandle.build(op, p.get("sigma"))


def _mu(args, cfg, n: int) -> np.ndarray:
    mu = _parse_vec(args.mu)
    if mu is None and "mu" in cfg.get("level_set", {}):
        mu = np.asarray(cfg["level_set"]["mu"], dtype=float)
    if mu is None:
        raise ConfigInvalid("--mu is required")
    if mu.shape != (n,):
        raise ConfigInvalid(f"mu needs {n} entries")
    return mu


# ---------------------------------------------------------------------------
# commands


def cmd_cones(args, cfg, out):
    ls = _level_set(args, cfg)
    mu = _mu(args, cfg, ls.op.n)
    cp = conegeo.membership_cplus(ls, mu, seed=args.seed)
    ct = conegeo.membership_ctilde(ls, mu, seed=args.seed)
    summary = {
        "operator": ls.op.label,
        "n": ls.op.n,
        "sigma": ls.sigma,
        "mu": mu,
        "cplus": {"status": cp.status, "epsilon": cp.epsilon, "radius": cp.radius},
        "ctilde": {"status": ct.status, "margin": ct.margin, "plane_normal": ct.plane_normal, "plane_offset": ct.plane_offset},
    }
    _write_summary(out, summary)
    return EXIT_VERDICT if "out" in (cp.status, ct.status) else EXIT_OK


def cmd_rank(args, cfg, out):
    ls = _level_set(args, cfg)
    est = conegeo.estimate_rank(ls, seed=args.seed)
    summary = {
        "rank": est.rank,
        "operator": ls.op.label,
        "n": ls.op.n,
        "radius": est.radius,
        "clusters": [{"pattern": list(c.pattern), "size": c.size, "nonzero": c.nonzero, "shrinking": c.shrinking} for c in est.normal_clusters],
    }
    _write_summary(out, summary)
    return EXIT_OK


def cmd_dichotomy(args, cfg, out):
    ls = _level_set(args, cfg)
    mu = _mu(args, cfg, ls.op.n)
    try:
        w = conegeo.dichotomy_witness(ls, mu, seed=args.seed)
    except HypothesisFailed as exc:
        _write_summary(out, {"operator": ls.op.label, "mu": mu, "verdict": "hypothesis_failed", "reason": str(exc)})
        return EXIT_VERDICT
    if out is not None:
        samples = conegeo.shell_samples(ls, conegeo.refine_ladder(conegeo.DEFAULT_SHELLS), seed=args.seed)
        conegeo.write_samples_csv(out / "samples.csv", samples, mu)
    summary = {
        "operator": ls.op.label,
        "mu": mu,
        "sigma": ls.sigma,
        "delta": w.delta,
        "epsilon": w.epsilon,
        "radius_max": w.radius_max,
        "samples_checked": w.samples_checked,
        "violations": w.violations,
    }
    _write_summary(out, summary)
    return EXIT_VERDICT if w.violations else EXIT_OK


def cmd_hprofile(args, cfg, out):
    ls = _level_set(args, cfg)
    mu = _mu(args, cfg, ls.op.n)
    radii = _parse_vec(args.radii)
    radii = (5.0, 10.0, 20.0, 40.0, 80.0) if radii is None else tuple(radii.tolist())
    prof = conegeo.h_mu_profile(ls, mu, radii, seed=args.seed)
    if out is not None:
        conegeo.write_profile_csv(out / "profile.csv", prof)
    _write_summary(out, {"operator": ls.op.label, "mu": mu, "sigma": ls.sigma, "rows": prof.rows, "nondecreasing": prof.nondecreasing})
    return EXIT_OK


def _solve_summary(problem, rep, u_star=None):
    s = rep.summary()
    s.pop("lam", None)
    s["operator"] = problem.op.label
    s["n"] = problem.grid.n
    s["resolution"] = problem.grid.m
    if u_star is not None:
        diff = rep.u - u_star
        s["error_vs_exact"] = float(np.abs(diff - diff.mean()).max())
    return s


def _write_history(out, rep):
    if out is None:
        return
    with open(out / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "residual_inf"])
        for i, r in enumerate(rep.residual_history):
            w.writerow([i, repr(float(r))])
    write_field(out / "u.bin", rep.u)
    write_field(out / "lambda.bin", rep.lam)


def cmd_solve(args, cfg, out):
    if not cfg:
        raise ConfigInvalid("solve needs --config")
    problem, u_star = build_problem(cfg)
    rep = solve(problem, solver_options(cfg))
    _write_history(out, rep)
    _write_summary(out, _solve_summary(problem, rep, u_star))
    return EXIT_OK


def cmd_verify(args, cfg, out):
    summary = {}
    failed = False
    if cfg.get("psi") is not None:
        problem, _ = build_problem(cfg)
        ubar = eval_expression(cfg.get("ubar", 0.0), problem.grid)
        sub = estimates.subsolution_check(problem, ubar, seed=args.seed)
        summary["subsolution"] = sub.counts
        failed |= sub.any_out
    if args.op is not None or "level_set" in cfg:
        ls = _level_set(args, cfg)
        op = ls.op
        st = check_structure(op, args.samples, seed=args.seed)
        cns = estimates.cns_inequality_check(op, trials=args.trials, seed=args.seed)
        summary["structure"] = st.as_dict()
        summary["cns"] = cns.as_dict()
        failed |= st.min_grad <= 0 or st.max_hess_eig_relative > 1e-9 or st.midpoint_violations > 0 or cns.violations > 0
        if out is not None:
            with open(out / "cns.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow([f"lambda_{i}" for i in range(op.n)] + ["left", "right", "margin"])
                for row in cns.rows:
                    w.writerow([repr(x) for x in row["lambda"]] + [repr(row["left"]), repr(row["right"]), repr(row["margin"])])
    if not summary:
        raise ConfigInvalid("verify needs --op/--n or a problem config")
    summary["verdict"] = "fail" if failed else "pass"
    _write_summary(out, summary)
    return EXIT_VERDICT if failed else EXIT_OK


def cmd_gauduchon(args, cfg, out):
    if not cfg:
        raise ConfigInvalid("gauduchon needs --config")
    if cfg["chi"]["kind"] != "gauduchon":
        raise ConfigInvalid("gauduchon needs a config with chi.kind = gauduchon")
    problem, _ = build_problem(cfg)
    sub = estimates.subsolution_check(problem, np.zeros(problem.grid.shape), seed=args.seed)
    rep = solve(problem, solver_options(cfg))
    a5 = estimates.a5_check(problem, rep.u)
    _write_history(out, rep)
    s = _solve_summary(problem, rep)
    s["subsolution_zero"] = sub.counts
    s["a5"] = a5.as_dict()
    s["a2"] = estimates.a2_check(problem.chi, problem.metric, seed=args.seed).status
    _write_summary(out, s)
    return EXIT_VERDICT if sub.any_out else EXIT_OK


COMMANDS = {
    "cones": cmd_cones,
    "rank": cmd_rank,
    "dichotomy": cmd_dichotomy,
    "hprofile": cmd_hprofile,
    "solve": cmd_solve,
    "verify": cmd_verify,
    "gauduchon": cmd_gauduchon,
}


class _Parser(argparse.ArgumentParser):
    # usage errors are failures to compute, not negative verdicts
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


HELP = {
    "cones": "membership of --mu in both tangent cones at infinity",
    "rank": "rank of the tangent cone at infinity",
    "dichotomy": "dichotomy witness (delta, epsilon) for --mu",
    "hprofile": "tabulate the h_mu(r) profile",
    "solve": "continuity + Newton solve of a configured problem",
    "verify": "structure, concavity and subsolution checks",
    "gauduchon": "solve the Gauduchon problem and check its hypotheses",
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON problem/level-set config")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1, help="FFT worker threads")
    common.add_argument("--out", help="directory for summary.json and CSV tables")
    common.add_argument("--op", help="logrho, sigmak, quotient, ratio or arctan")
    common.add_argument("--n", type=int)
    common.add_argument("--k", type=int)
    common.add_argument("--l", type=int)
    common.add_argument("--sigma", type=float)
    common.add_argument("--mu", help="comma-separated mu")
    common.add_argument("--radii", help="comma-separated radii (hprofile)")
    common.add_argument("--samples", type=int, default=1000, help="structure samples (verify)")
    common.add_argument("--trials", type=int, default=10_000, help="concavity trials (verify)")
    parser = _Parser(prog="hessianlab", description="Cone geometry and Hessian-equation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=HELP[name])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else {}
        out = None
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
        if args.threads < 1:
            raise ConfigInvalid("--threads must be >= 1")
        with sfft.set_workers(args.threads):
            return COMMANDS[args.command](args, cfg, out)
    except (LabError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}, sort_keys=True), file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
