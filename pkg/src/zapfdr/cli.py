"""Command-line interface.

Every command writes its results plus a ``manifest.json`` into ``--out``;
``zap rerun MANIFEST`` replays a manifest and reproduces the outputs
byte for byte.  Exit codes: 0 success, 2 input error, 3 numeric failure.
Failures print one JSON record to stderr.
"""

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .asymp import AsympConfig, run_zap_asymp
from .em import EMConfig, EMError, fit_full_em
from .finite import FiniteRunConfig, run_zap_finite
from .model import BetaMixtureParams, TestingInput
from .numeric import EPS_U
from .oracle import OracleModel, run_oracle
from .simulation import MethodOptions, ScenarioConfig, bh_procedure, replicate

log = logging.getLogger("zapfdr")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class InputError(ValueError):
    """Malformed user input; ``line`` is the 1-based file line when known."""

    def __init__(self, message, line=None, path=None):
        super().__init__(message)
        self.line = line
        self.path = path


# --------------------------------------------------------------------------
# input


def _float_cell(text, line, col):
    try:
        v = float(text)
    except ValueError:
        raise InputError(f"non-numeric value {text!r} in column {col!r}", line) from None
    if math.isnan(v):
        raise InputError(f"NaN in column {col!r}", line)
    return v


def parse_input(path):
    """Read a CSV with a ``z`` (or ``u``) column and optional ``x1..xp``.

    Raises
    ------
    InputError
        Missing required column, non-numeric cell or ragged row; the error
        carries the offending line number.
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot open input: {exc.strerror}", path=str(path)) from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError("empty input file", 1, str(path)) from None
        except csv.Error as exc:
            raise InputError(f"malformed CSV: {exc}", 1, str(path)) from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise InputError("duplicate column names", 1, str(path))
        xcols = sorted((h for h in header if h[:1] == "x" and h[1:].isdigit()),
                       key=lambda h: int(h[1:]))
        if xcols and [int(h[1:]) for h in xcols] != list(range(1, len(xcols) + 1)):
            raise InputError("covariate columns must be x1..xp without gaps", 1, str(path))
        if "z" in header:
            key = "z"
        elif "u" in header:
            key = "u"
        else:
            raise InputError("missing required column 'z' (or 'u')", 1, str(path))
        extra = [h for h in header if h not in xcols and h not in ("z", "u", "index")]
        if extra:
            log.warning("ignoring unknown columns %s", extra)
        ki = header.index(key)
        xi = [header.index(h) for h in xcols]
        vals, covs = [], []
        try:
            for row in reader:
                line = reader.line_num
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != len(header):
                    raise InputError(f"expected {len(header)} fields, found {len(row)}", line,
                                     str(path))
                try:
                    vals.append(_float_cell(row[ki].strip(), line, key))
                    covs.append([_float_cell(row[i].strip(), line, header[i]) for i in xi])
                except InputError as exc:
                    exc.path = str(path)
                    raise
        except csv.Error as exc:
            raise InputError(f"malformed CSV: {exc}", reader.line_num, str(path)) from None
    if not vals:
        raise InputError("no data rows", 2, str(path))
    v = np.asarray(vals)
    x = np.asarray(covs, dtype=float).reshape(len(vals), len(xcols))
    if key == "z":
        if np.any(~np.isfinite(v)):
            bad = int(np.flatnonzero(~np.isfinite(v))[0])
            raise InputError("non-finite z-value", bad + 2, str(path))
        return TestingInput.from_z(v, x)
    bad = np.flatnonzero((v < 0.0) | (v > 1.0))
    if bad.size:
        raise InputError("u-values must lie in [0, 1]", int(bad[0]) + 2, str(path))
    n_clamped = int(np.count_nonzero((v < EPS_U) | (v > 1.0 - EPS_U)))
    if n_clamped:
        log.warning("clamped %d u-values into [%g, 1 - %g]", n_clamped, EPS_U, EPS_U)
    return TestingInput(v, x)


# --------------------------------------------------------------------------
# output helpers


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(c) for c in r])


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _per_hypothesis(out, data, stat, rejected, mirror=None):
    rej = np.zeros(data.m, dtype=bool)
    rej[rejected] = True
    z = data.z if data.z is not None else np.full(data.m, math.nan)
    header = ["index", "z", "u", "statistic"] + (["mirror"] if mirror is not None else []) + ["rejected"]
    rows = []
    for i in range(data.m):
        row = [i, z[i], data.u[i], stat[i]]
        if mirror is not None:
            row.append(mirror[i])
        row.append(rej[i])
        rows.append(row)
    _write_csv(out / "results.csv", header, rows)


# --------------------------------------------------------------------------
# configuration


def _load_config(path):
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot open config: {exc.strerror}", path=str(path)) from None
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON config: {exc.msg}", exc.lineno, str(path)) from None
    if not isinstance(cfg, dict):
        raise InputError("config must be a JSON object", path=str(path))
    return cfg


def _em_config(args, cfg):
    em = EMConfig.from_dict(cfg.get("em", {}))
    if args.tol is not None:
        em = replace(em, tol=args.tol)
    if args.max_iter is not None:
        em = replace(em, max_iter=args.max_iter)
    return em


def _threads(args):
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("ZAP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InputError(f"ZAP_THREADS must be an integer, got {env!r}") from None
    return 1


def _gammas(args):
    g = (args.gamma_l, args.gamma_r)
    if min(g) <= 2.0:
        raise InputError("gamma values must exceed 2")
    return g


def _check_alpha(a):
    if not 0.0 < a < 1.0:
        raise InputError("alpha must lie in (0, 1)")


def _maybe_intercept_only(data, cfg):
    if cfg.get("intercept_only"):
        return TestingInput(data.u, np.zeros((data.m, 0)), data.z)
    return data


# --------------------------------------------------------------------------
# commands


def cmd_test_asymp(args, out):
    cfg = _load_config(args.config)
    _check_alpha(args.alpha)
    data = _maybe_intercept_only(parse_input(args.input), cfg)
    conf = AsympConfig(_gammas(args), args.n_mc, args.seed, _em_config(args, cfg),
                       bool(cfg.get("use_t_max", False)))
    res = run_zap_asymp(data, args.alpha, conf)
    st = res.stats
    _per_hypothesis(out, data, st.t_hat, res.rejected, st.t_mirror)
    fit = res.extra["fit"]
    _write_json(out / "params.json", fit.params.to_dict())
    return {"n_rejected": res.n_rejected, "threshold": _finite_or_str(res.threshold),
            "fdp_estimate": _finite_or_str(res.fdp_estimate), "em_iterations": fit.iterations,
            "em_converged": fit.converged}


def cmd_test_finite(args, out):
    cfg = _load_config(args.config)
    _check_alpha(args.alpha)
    data = _maybe_intercept_only(parse_input(args.input), cfg)
    try:
        conf = FiniteRunConfig(args.alpha, args.s_l0, args.s_r0, args.refit_every, _gammas(args),
                               _em_config(args, cfg), int(cfg.get("refit_max_iter", 20)),
                               args.seed)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    res, trace = run_zap_finite(data, conf)
    _per_hypothesis(out, data, res.stats, res.rejected)
    trace.to_csv(out / "trace.csv")
    th = res.extra["thresholds"]
    _write_csv(out / "thresholds.csv", ["index", "s_l", "s_r"],
               [(i, th.s_l[i], th.s_r[i]) for i in range(data.m)])
    return {"n_rejected": res.n_rejected, "fdp_estimate": _finite_or_str(res.fdp_estimate),
            "reveals": len(trace), "refits": len(trace.refits)}


def cmd_bh(args, out):
    _check_alpha(args.alpha)
    data = parse_input(args.input)
    p = data.p_values()
    rej = bh_procedure(p, args.alpha)
    _per_hypothesis(out, data, p, rej)
    return {"n_rejected": int(rej.size)}


def _scenario_from_args(args, m=None):
    base = {}
    if args.scenario_file:
        with open(args.scenario_file, encoding="utf-8") as fh:
            try:
                base = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InputError(f"invalid scenario JSON: {exc.msg}", exc.lineno,
                                 args.scenario_file) from None
    if args.scenario:
        base["scenario"] = args.scenario
    for k in ("eps", "eta", "zeta", "sigma", "w", "rho", "mu_l", "mu_r", "p"):
        v = getattr(args, k, None)
        if v is not None:
            base[k] = v
    if m is not None:
        base["m"] = m
    base.setdefault("seed", args.seed)
    if "scenario" not in base:
        raise InputError("a scenario is required (--scenario or --scenario-file)")
    try:
        return ScenarioConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid scenario: {exc}") from None


def cmd_oracle(args, out):
    _check_alpha(args.alpha)
    data = parse_input(args.input)
    sc = _scenario_from_args(args, m=data.m)
    model = sc.oracle_model()
    res = run_oracle(model, data, args.alpha, args.mode)
    _per_hypothesis(out, data, res.stats, res.rejected)
    _write_json(out / "model.json", model.to_dict())
    return {"n_rejected": res.n_rejected, "threshold": _finite_or_str(res.threshold),
            "conditional_fdr": res.fdp_estimate}


def cmd_simulate(args, out):
    cfg = _load_config(args.config)
    alphas = [float(a) for a in str(args.alphas or args.alpha).split(",")]
    for a in alphas:
        _check_alpha(a)
    sc = _scenario_from_args(args, m=args.m)
    methods = [s.strip() for s in args.methods.split(",") if s.strip()]
    opts = MethodOptions(_gammas(args), args.n_mc, args.s_l0, args.s_r0, args.refit_every,
                         int(cfg.get("refit_max_iter", 20)), _em_config(args, cfg),
                         bool(cfg.get("intercept_only", False)))
    try:
        res = replicate(sc, methods, args.reps, alphas, opts, workers=_threads(args))
    except ValueError as exc:
        raise InputError(str(exc)) from None
    res.to_csv(out / "replicates.csv")
    res.summary_to_csv(out / "summary.csv")
    return {"summary": [s.__dict__ for s in res.summary()]}


def cmd_fit(args, out):
    cfg = _load_config(args.config)
    data = _maybe_intercept_only(parse_input(args.input), cfg)
    rep = fit_full_em(data, _gammas(args), _em_config(args, cfg))
    _write_json(out / "params.json", rep.params.to_dict())
    return {"iterations": rep.iterations, "converged": rep.converged,
            "loglik": rep.loglik_trace[-1]}


def _finite_or_str(v):
    return v if math.isfinite(v) else str(v)


COMMANDS = {
    "test-asymp": cmd_test_asymp,
    "test-finite": cmd_test_finite,
    "bh": cmd_bh,
    "oracle": cmd_oracle,
    "simulate": cmd_simulate,
    "fit": cmd_fit,
}


# --------------------------------------------------------------------------
# parser and dispatch


def _common(p):
    p.add_argument("--alpha", type=float, default=0.05, help="target FDR level")
    p.add_argument("--seed", type=int, default=0, help="RNG seed")
    p.add_argument("--threads", type=int, default=None,
                   help="worker cap (default: $ZAP_THREADS or 1)")
    p.add_argument("--gamma-l", type=float, default=4.0)
    p.add_argument("--gamma-r", type=float, default=4.0)
    p.add_argument("--n-mc", type=int, default=50000, help="uniform pool size")
    p.add_argument("--s-l0", type=float, default=0.2)
    p.add_argument("--s-r0", type=float, default=0.8)
    p.add_argument("--refit-every", type=int, default=None, help="default ceil(m/100)")
    p.add_argument("--tol", type=float, default=None, help="EM relative tolerance")
    p.add_argument("--max-iter", type=int, default=None, help="EM iteration cap")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--out", required=True, help="output directory")


def _scenario_args(p):
    p.add_argument("--scenario", default=None)
    p.add_argument("--scenario-file", default=None)
    for k in ("eps", "eta", "zeta", "sigma", "w", "rho", "mu-l", "mu-r"):
        p.add_argument(f"--{k}", type=float, default=None)
    p.add_argument("--p", type=int, default=None, help="noise covariates (null scenario)")


def build_parser():
    ap = argparse.ArgumentParser(prog="zap", description="Covariate-adaptive FDR control on z-values.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("test-asymp", "test-finite", "bh", "fit"):
        p = sub.add_parser(name)
        _common(p)
        p.add_argument("--in", dest="input", required=True, help="input CSV")
    p = sub.add_parser("oracle")
    _common(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--mode", choices=("z", "p"), default="z")
    _scenario_args(p)
    p = sub.add_parser("simulate")
    _common(p)
    _scenario_args(p)
    p.add_argument("--m", type=int, default=1000)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--methods", default="zap-asymp,bh")
    p.add_argument("--alphas", default=None, help="comma-separated levels (overrides --alpha)")
    p = sub.add_parser("rerun")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="override the output directory")
    return ap


def _manifest(args):
    d = {k: v for k, v in vars(args).items() if k not in ("verbose",)}
    return {"tool": "zap", "version": __version__, "command": args.command, "args": d}


def _error(kind, exc, code):
    rec = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    line = getattr(exc, "line", None)
    if line is not None:
        rec["line"] = line
    path = getattr(exc, "path", None)
    if path:
        rec["path"] = path
    sys.stderr.write(json.dumps(rec, sort_keys=True) + "\n")
    return code


def run(args):
    if args.command == "rerun":
        try:
            with open(args.manifest, encoding="utf-8") as fh:
                man = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read manifest: {exc}") from None
        saved = dict(man.get("args", {}))
        if args.out:
            saved["out"] = args.out
        args = argparse.Namespace(**saved)
        if args.command not in COMMANDS:
            raise InputError(f"manifest names unknown command {args.command!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = COMMANDS[args.command](args, out)
    _write_json(out / "manifest.json", _manifest(args))
    _write_json(out / "summary.json", summary)
    return summary


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        with np.errstate(all="ignore"):
            summary = run(args)
    except InputError as exc:
        return _error("input", exc, EXIT_INPUT)
    except (EMError, FloatingPointError, np.linalg.LinAlgError, ArithmeticError) as exc:
        return _error("numeric", exc, EXIT_NUMERIC)
    except ValueError as exc:
        return _error("input", exc, EXIT_INPUT)
    print(json.dumps(summary, sort_keys=True, default=_json_default))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
