"""Command-line front end: one subcommand per pipeline, JSON/CSV artifacts plus run metadata."""

import argparse
import csv
import json
import math
import platform
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import hj, mclab, parisi, uninverted
from .model import ModelError, load_model, sample_disorder, sk_model
from .parallel import thread_count

EXIT_OK, EXIT_CONFIG, EXIT_TOLERANCE = 0, 2, 3

# defaults follow the acceptance table; every one can be overridden on the command line
TOL_ANALYTIC = 1e-3
TOL_ENUM = 2e-2
TOL_SCHEME = 1e-2


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    subcommand: str
    argv: list
    params: dict
    seed: int = None
    out: str = None
    fmt: str = "json"

    def metadata(self):
        return {"subcommand": self.subcommand, "argv": list(self.argv), "params": self.params,
                "seed": self.seed, "version": __version__, "python": platform.python_version(),
                "numpy": np.__version__, "threads": thread_count(), "created": time.strftime("%Y-%m-%dT%H:%M:%S")}


@dataclass
class CrossCheckReport:
    values: dict
    gaps: dict
    checks: dict
    dictionary: dict
    notes: list = field(default_factory=list)

    def as_dict(self):
        return {"values": self.values, "gaps": self.gaps, "checks": self.checks,
                "dictionary": self.dictionary, "notes": self.notes}


@dataclass
class Result:
    record: dict
    rows: list = None
    columns: list = None
    checks: dict = field(default_factory=dict)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if hasattr(x, "value") and hasattr(x, "name") and not isinstance(x, (int, str)):
        return x.value
    return x


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def _model(args):
    if getattr(args, "model", None):
        try:
            return load_model(args.model)
        except OSError as exc:
            raise ConfigError(str(exc)) from exc
    return sk_model()


def _params(args):
    if args.beta is not None and args.t is not None:
        raise ConfigError("give either --beta or --t, not both")
    if args.t is not None:
        return mclab.Params.enriched(args.t, args.h if args.h is not None else [0.0])
    return mclab.Params.plain(args.beta if args.beta is not None else 0.0)


# mc ------------------------------------------------------------------------------------

def cmd_model_validate(args):
    m = _model(args)
    xs = np.linspace(0, 1, 11)
    convex = None
    if m.species_count == 1:
        vals = m.xi(xs[:, None])
        convex = bool(np.all(np.diff(vals, 2) >= -1e-12))
    return Result({"model": m.to_dict(), "species": m.species_count, "degree": m.mixture.degree,
                   "xi_self": float(m.xi(m.self_overlap())), "convex_on_unit_interval": convex})


def cmd_mc_enumerate(args):
    m = _model(args)
    p = _params(args)
    rows = []
    for i in range(args.samples):
        s = sample_disorder(m, args.N, mclab.sample_seed(args.seed, i) if args.samples > 1 else args.seed)
        rows.append((i, s.seed, float(mclab.free_energies(s, [p])[0])))
    vals = np.array([r[2] for r in rows])
    return Result({"N": args.N, **p.as_dict(), "values": vals.tolist(), "mean": float(vals.mean())},
                  rows, ["index", "seed", "free_energy"])


def cmd_mc_quenched(args):
    m = _model(args)
    p = _params(args)
    est = mclab._estimate(mclab._quenched(m, args.N, [p], args.samples, args.seed)[:, 0], args.N, p)
    rows = [(i, float(v)) for i, v in enumerate(est.samples)]
    return Result(est.as_dict(), rows, ["index", "free_energy"])


def cmd_mc_enriched(args):
    m = _model(args)
    est = mclab.enriched_free_energy(m, args.N, args.t or 0.0, args.h if args.h is not None else [0.0],
                                     args.samples, args.seed)
    rows = [(i, float(v)) for i, v in enumerate(est.samples)]
    return Result(est.as_dict(), rows, ["index", "free_energy"])


def cmd_mc_max(args):
    m = _model(args)
    rows = []
    for i in range(args.samples):
        s = sample_disorder(m, args.N, mclab.sample_seed(args.seed, i) if args.samples > 1 else args.seed)
        sigma, e = mclab.max_energy(s, method=args.method)
        rows.append((i, s.seed, float(e / args.N), "".join("+" if v > 0 else "-" for v in sigma)))
    vals = np.array([r[2] for r in rows])
    rec = {"N": args.N, "method": args.method, "energy_per_spin": vals.tolist(), "mean": float(vals.mean()),
           "std_error": float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0,
           "configurations": [r[3] for r in rows]}
    return Result(rec, rows, ["index", "seed", "energy_per_spin", "sigma"])


def cmd_mc_derivcheck(args):
    m = _model(args)
    if args.t is None:
        raise ConfigError("derivcheck needs --t")
    rep = mclab.derivative_identity_check(m, args.N, args.t, args.h if args.h is not None else [0.0],
                                          args.samples, args.seed)
    checks = {k: bool(v) for k, v in rep.items() if k.startswith("pass")}
    return Result(rep, checks=checks)


def _load_martingale(path):
    return uninverted.MarkovMartingale.from_dict(_read_json(path))


def cmd_mc_iams(args):
    m = _model(args)
    if args.martingale:
        alpha = _load_martingale(args.martingale)
        target = float("nan")
    else:
        alg = uninverted.alg_threshold(m, seed=args.seed)
        alpha, target = alg.martingale, alg.value
    s = sample_disorder(m, args.N, args.seed)
    res = mclab.incremental_optimize(s, alpha, args.steps, seed=args.seed)
    rec = {"N": args.N, "steps": args.steps, "energy_per_spin": res.energy, "target": target,
           "checkpoints": res.checkpoints}
    cols = ["t", "mean_m2", "target_s", "mean_abs_m"]
    rows = [tuple(c[k] for k in cols) for c in res.checkpoints]
    checks = {}
    if math.isfinite(target):
        checks["energy_at_least_0.9_target"] = bool(res.energy >= 0.9 * target)
    return Result(rec, rows, cols, checks)


# parisi -------------------------------------------------------------------------------

def _measure(args):
    if not args.measure:
        raise ConfigError("--measure is required")
    p = Path(args.measure)
    d = _read_json(p) if p.exists() else json.loads(args.measure)
    try:
        return parisi.DiscreteMeasure.from_dict(d)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad measure: {exc}") from exc


def cmd_parisi_solve(args):
    mu = _measure(args)
    sol = parisi.solve_parisi_pde(mu, args.beta)
    val = sol.value_at_origin - args.beta**2 * parisi.correction_integral(mu)
    return Result({"beta": args.beta, "value": val, "phi_origin": sol.value_at_origin,
                   "measure": mu.to_dict(), "grid": sol.diagnostics()})


def cmd_parisi_opt(args):
    fit = parisi.optimize_parisi(args.beta, args.K, restarts=args.restarts, seed=args.seed)
    rows = list(fit.levels)
    return Result({"beta": args.beta, "K": args.K, "value": fit.value, "measure": fit.measure.to_dict(),
                   "levels": rows, "converged": fit.converged}, rows, ["K", "value"])


# uninverted ---------------------------------------------------------------------------

def cmd_uninvert_eval(args):
    alpha = _load_martingale(args.martingale)
    v = uninverted.evaluate_uninverted(alpha, args.beta)
    return Result({"beta": args.beta, **v.as_dict()})


def cmd_uninvert_opt(args):
    fit = uninverted.optimize_uninverted(args.beta, M=args.M, restarts=args.restarts, seed=args.seed)
    rec = {"beta": args.beta, "M": args.M, **fit.value.as_dict(), "nfev": fit.nfev,
           "converged": fit.converged, "martingale": fit.martingale.to_dict()}
    return Result(rec)


def cmd_uninvert_alg(args):
    res = uninverted.alg_threshold(_model(args), M=args.M, restarts=args.restarts, seed=args.seed)
    rec = {**res.as_dict(), "martingale": res.martingale.to_dict()}
    return Result(rec, checks={"constraint_residual": not res.flagged})


# hj -------------------------------------------------------------------------------------

def _field_result(fld, extra):
    cols = ["t", "h", "f"] if fld.dimension == 1 else ["t", "h1", "h2", "f"]
    rec = {**extra, "dt": fld.dt, "times": fld.times.tolist(), "warnings": fld.warnings}
    return Result(rec, fld.rows(), cols)


def cmd_hj_scalar(args):
    fld = hj.solve_hj_scalar(_model(args), args.t_max, dh=args.dh, h_max=args.h_max,
                             save_times=args.save)
    return _field_result(fld, {"t_max": args.t_max, "dh": args.dh, "f_t_max_h0": float(fld.values[-1][0])})


def cmd_hj_bipartite(args):
    l1, l2 = args.lam
    fld = hj.solve_hj_bipartite(l1, l2, args.t_max, dh=args.dh, h_max=args.h_max, save_times=args.save)
    return _field_result(fld, {"lambda": [l1, l2], "t_max": args.t_max, "dh": args.dh,
                               "f_t_max_origin": float(fld.values[-1][0, 0])})


def cmd_hj_hopflax(args):
    q = hj.StepPath.from_dict(_read_json(args.path)) if args.path else None
    res = hj.hopf_lax(_model(args), args.t, q=q, K=args.K, restarts=args.restarts, seed=args.seed)
    return Result({"t": args.t, "value": res.value, "value_at_zero_increment": res.at_zero,
                   "increment": res.increment.to_dict(), "converged": res.converged})


def cmd_hj_psi1(args):
    q = hj.StepPath.from_dict(_read_json(args.path))
    return Result({"path": q.to_dict(), "psi1": hj.psi1_path(q),
                   "measure": hj.path_measure_map(q).to_dict()})


# compare --------------------------------------------------------------------------------

def compare(model, beta=None, t=None, Ns=(8, 12, 16), samples=200, seed=0, K=4, M=64, restarts=4,
            tol_analytic=TOL_ANALYTIC, tol_enum=TOL_ENUM, tol_scheme=TOL_SCHEME, h_point=0.0):
    """Run every applicable pipeline at one temperature and cross-check the values.

    Values are reported in the plain convention; enriched ones are converted by
    f_plain(sqrt(2t)) = t xi(self) - f_enriched(t, 0), with t = beta^2 / 2.
    """
    if (beta is None) == (t is None):
        raise ConfigError("give exactly one of beta and t")
    if beta is None:
        beta = math.sqrt(2 * t)
    t = beta**2 / 2
    xi_self = float(model.xi(model.self_overlap()))
    values, notes, checks, failed = {}, [], {}, {}
    dictionary = {"plain_from_enriched": "f_plain(beta) = t*xi(self) - f_enriched(t, 0)",
                  "t": t, "beta": beta, "xi_self": xi_self}

    def attempt(name, fn):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                values[name] = fn()
        except Exception as exc:  # report, keep going
            failed[name] = f"{type(exc).__name__}: {exc}"

    if model.species_count == 1:
        def enumeration():
            ests = [mclab.quenched_free_energy(model, N, beta, samples, seed + N) for N in Ns]
            a, se, _ = mclab.extrapolate_inverse_n(Ns, [e.mean for e in ests], [e.std_error for e in ests])
            values["enumeration_se"] = se
            return a

        attempt("enumeration", enumeration)
        attempt("parisi", lambda: parisi.optimize_parisi(beta, K, restarts=restarts, seed=seed).value)
        attempt("uninverted", lambda: uninverted.optimize_uninverted(beta, M=M, restarts=restarts, seed=seed).value.total)
        if t > 0:
            attempt("hopf_lax", lambda: t * xi_self - hj.hopf_lax(model, t, K=8, restarts=min(restarts, 2), seed=seed).value)
            attempt("hj_scheme", lambda: t * xi_self - float(hj.solve_hj_scalar(model, t).values[-1][0]))
        else:
            values["hopf_lax"] = values["hj_scheme"] = 0.0
        analytic = [values[k] for k in ("parisi", "uninverted", "hopf_lax") if k in values]
        if len(analytic) > 1:
            checks["analytic_agree"] = bool(max(analytic) - min(analytic) <= tol_analytic)
        if "parisi" in values:
            ref = values["parisi"]
            if "enumeration" in values:
                checks["enumeration_agree"] = bool(abs(values["enumeration"] - ref) <= tol_enum)
            if "hj_scheme" in values:
                checks["scheme_agree"] = bool(abs(values["hj_scheme"] - ref) <= tol_scheme)
            if "uninverted" in values:
                checks["weak_duality"] = bool(values["uninverted"] <= ref + tol_analytic)
    else:
        notes.append("parisi: not applicable (multi-species model)")
        notes.append("uninverted: not applicable (multi-species model)")
        if model.species_count != 2:
            notes.append("hj: only the bipartite two-species equation is implemented")
        else:
            l1, l2 = model.fractions
            h = [h_point, h_point]
            N = Ns[-1]

            def mc():
                est = mclab.enriched_free_energy(model, N, t, h, samples, seed)
                values["mc_enriched_se"] = est.std_error
                return est.mean

            attempt("mc_enriched", mc)

            def scheme():
                fld = hj.solve_hj_bipartite(l1, l2, t, dh=0.02)
                return fld.at(t, h)

            attempt("hj_bipartite", scheme)
            if "mc_enriched" in values and "hj_bipartite" in values:
                bound = values["mc_enriched"] + 3 * values["mc_enriched_se"] + 5e-3
                checks["hj_below_mc"] = bool(values["hj_bipartite"] <= bound)
            dictionary["values_convention"] = "enriched"
    for name, msg in failed.items():
        checks[f"{name}_ran"] = False
        notes.append(f"{name} failed: {msg}")
    keys = [k for k in values if not k.endswith("_se")]
    gaps = {f"{a}-{b}": values[a] - values[b] for i, a in enumerate(keys) for b in keys[i + 1:]}
    return CrossCheckReport(values, gaps, checks, dictionary, notes)


def cmd_compare(args):
    rep = compare(_model(args), beta=args.beta, t=args.t, Ns=tuple(args.Ns), samples=args.samples,
                  seed=args.seed, K=args.K, M=args.M, restarts=args.restarts, tol_analytic=args.tol_analytic,
                  tol_enum=args.tol_enum, tol_scheme=args.tol_scheme, h_point=args.h_point)
    rows = sorted(rep.values.items())
    return Result(rep.as_dict(), rows, ["pipeline", "value"], rep.checks)


# plumbing -------------------------------------------------------------------------------

def _write(result, out, fmt, meta):
    payload = _jsonable(result.record)
    if out is None:
        print(json.dumps(payload, indent=2, sort_keys=True))
        return
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        with out.open("w", newline="") as fh:
            w = csv.writer(fh)
            if result.rows is not None:
                w.writerow(result.columns)
                w.writerows(_jsonable(result.rows))
            else:
                flat = {k: v for k, v in payload.items() if not isinstance(v, (dict, list))}
                w.writerow(list(flat))
                w.writerow(list(flat.values()))
    else:
        out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    Path(str(out) + ".meta.json").write_text(json.dumps(_jsonable(meta), indent=2, sort_keys=True) + "\n")


def _common(p, seed=True, model=True):
    if model:
        p.add_argument("--model", help="model file (TOML or JSON); default SK")
    if seed:
        p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output file; .csv or .json")
    p.add_argument("--format", choices=["csv", "json"], help="override the format implied by --out")
    p.add_argument("--strict", action="store_true", help="exit 3 when a declared tolerance fails")


def _temperature(p):
    p.add_argument("--beta", type=float)
    p.add_argument("--t", type=float)
    p.add_argument("--h", type=float, nargs="+")


def build_parser():
    ap = argparse.ArgumentParser(prog="spinlab", description="Spin-glass free-energy laboratory")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="group", required=True)

    g = sub.add_parser("model").add_subparsers(dest="cmd", required=True)
    p = g.add_parser("validate")
    p.add_argument("model")
    _common(p, seed=False, model=False)
    p.set_defaults(fn=cmd_model_validate)

    g = sub.add_parser("mc").add_subparsers(dest="cmd", required=True)
    for name, fn in [("enumerate", cmd_mc_enumerate), ("quenched", cmd_mc_quenched),
                     ("enriched", cmd_mc_enriched), ("derivcheck", cmd_mc_derivcheck)]:
        p = g.add_parser(name)
        p.add_argument("--N", type=int, required=True)
        p.add_argument("--samples", type=int, default=1 if name == "enumerate" else 100)
        _temperature(p)
        _common(p)
        p.set_defaults(fn=fn)
    p = g.add_parser("max")
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--method", choices=["auto", "exhaustive", "bnb"], default="auto")
    _common(p)
    p.set_defaults(fn=cmd_mc_max)
    p = g.add_parser("iams")
    p.add_argument("--N", type=int, default=2000)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--martingale", help="martingale JSON; default the ALG optimizer's")
    _common(p)
    p.set_defaults(fn=cmd_mc_iams)

    g = sub.add_parser("parisi").add_subparsers(dest="cmd", required=True)
    p = g.add_parser("solve")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--measure", help="JSON file or literal {atoms, weights}")
    _common(p, seed=False, model=False)
    p.set_defaults(fn=cmd_parisi_solve)
    p = g.add_parser("opt")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--K", type=int, default=4)
    p.add_argument("--restarts", type=int, default=8)
    _common(p, model=False)
    p.set_defaults(fn=cmd_parisi_opt)

    g = sub.add_parser("uninvert").add_subparsers(dest="cmd", required=True)
    p = g.add_parser("eval")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--martingale", required=True)
    _common(p, seed=False, model=False)
    p.set_defaults(fn=cmd_uninvert_eval)
    p = g.add_parser("opt")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--M", type=int, default=64)
    p.add_argument("--restarts", type=int, default=4)
    _common(p, model=False)
    p.set_defaults(fn=cmd_uninvert_opt)
    p = g.add_parser("alg")
    p.add_argument("--M", type=int, default=256)
    p.add_argument("--restarts", type=int, default=4)
    _common(p)
    p.set_defaults(fn=cmd_uninvert_alg)

    g = sub.add_parser("hj").add_subparsers(dest="cmd", required=True)
    p = g.add_parser("scalar")
    p.add_argument("--t-max", type=float, required=True)
    p.add_argument("--dh", type=float, default=0.01)
    p.add_argument("--h-max", type=float, default=4.0)
    p.add_argument("--save", type=float, nargs="*", help="extra output times")
    _common(p, seed=False)
    p.set_defaults(fn=cmd_hj_scalar)
    p = g.add_parser("bipartite")
    p.add_argument("--lam", type=float, nargs=2, default=[0.5, 0.5])
    p.add_argument("--t-max", type=float, required=True)
    p.add_argument("--dh", type=float, default=0.02)
    p.add_argument("--h-max", type=float, default=4.0)
    p.add_argument("--save", type=float, nargs="*")
    _common(p, seed=False, model=False)
    p.set_defaults(fn=cmd_hj_bipartite)
    p = g.add_parser("hopflax")
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--K", type=int, default=32)
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--path", help="base path JSON {mesh, values}; default q = 0")
    _common(p)
    p.set_defaults(fn=cmd_hj_hopflax)
    p = g.add_parser("psi1")
    p.add_argument("--path", required=True)
    _common(p, seed=False, model=False)
    p.set_defaults(fn=cmd_hj_psi1)

    p = sub.add_parser("compare")
    _temperature(p)
    p.add_argument("--Ns", type=int, nargs="+", default=[8, 12, 16])
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--K", type=int, default=4)
    p.add_argument("--M", type=int, default=64)
    p.add_argument("--restarts", type=int, default=4, help="random restarts for each optimizer")
    p.add_argument("--h-point", type=float, default=0.0, help="field value for the bipartite check")
    p.add_argument("--tol-analytic", type=float, default=TOL_ANALYTIC)
    p.add_argument("--tol-enum", type=float, default=TOL_ENUM)
    p.add_argument("--tol-scheme", type=float, default=TOL_SCHEME)
    _common(p)
    p.set_defaults(fn=cmd_compare, group="compare", cmd=None)

    p = sub.add_parser("replay")
    p.add_argument("meta", help="a .meta.json written by an earlier run")
    p.set_defaults(fn=None, group="replay", cmd=None)
    return ap


def run(argv):
    """Parse, dispatch and write artifacts; returns the exit code."""
    argv = list(argv)
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    if args.group == "replay":
        try:
            meta = _read_json(args.meta)
            return run(meta["argv"])
        except (ConfigError, KeyError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    fmt = args.format or ("csv" if args.out and args.out.endswith(".csv") else "json")
    params = {k: v for k, v in vars(args).items() if k not in ("fn",)}
    cfg = RunConfig(" ".join(x for x in (args.group, args.cmd) if x), argv, params,
                    getattr(args, "seed", None), args.out, fmt)
    try:
        result = args.fn(args)
    except (ConfigError, ModelError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    meta = cfg.metadata()
    meta["checks"] = result.checks
    _write(result, args.out, fmt, meta)
    if args.strict and not all(result.checks.values()):
        bad = [k for k, v in result.checks.items() if not v]
        print(f"tolerance check failed: {', '.join(bad)}", file=sys.stderr)
        return EXIT_TOLERANCE
    return EXIT_OK


def main(argv=None):
    sys.exit(run(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
