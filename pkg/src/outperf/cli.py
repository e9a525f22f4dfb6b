"""Command-line front end.

    outperf COMMAND --config run.json [--output PATH] [--seed N]

Every run is described by one JSON document. Relative output paths are
resolved against ``$OUTPERF_OUTPUT_DIR`` when it is set. Exit status is 0 on
success, 1 for invalid input and 2 for numerical failures.
"""

import argparse
import csv
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import dual, factor, finite, gbm, hjb
from .numerics.rng import RngStream

OUTPUT_ENV = "OUTPERF_OUTPUT_DIR"

CSV_HEADERS = {
    "gbm-curve": ("x", "theta", "v", "a_hat"),
    "gbm-beta-curve": ("beta", "v"),
    "etf-surface": ("p", "x", "v"),
    "mmm-scan": ("lambda", "a_hat", "value", "se"),
    "hjb-query": ("t", "s", "y", "x", "v", "a_hat"),
}


class InputError(ValueError):
    pass


def _get(cfg, key, kind=float, default=None, required=True):
    if key not in cfg:
        if required and default is None:
            raise InputError(f"{key}: missing from config")
        return default
    val = cfg[key]
    try:
        if kind is float:
            return float(val)
        if kind is int:
            if isinstance(val, bool) or int(val) != val:
                raise TypeError
            return int(val)
        if kind is list:
            if not isinstance(val, list) or not val:
                raise TypeError
            return [float(v) for v in val]
        if kind is dict:
            if not isinstance(val, dict):
                raise TypeError
            return val
        return kind(val)
    except (TypeError, ValueError):
        raise InputError(f"{key}: expected {kind.__name__}, got {val!r}") from None


def _grid(cfg, key):
    """A list ``[...]`` or ``{"start", "stop", "num"}``."""
    val = cfg.get(key)
    if isinstance(val, dict):
        try:
            return [float(v) for v in np.linspace(float(val["start"]), float(val["stop"]), int(val["num"]))]
        except (KeyError, TypeError, ValueError):
            raise InputError(f"{key}: grid needs numeric start, stop and num") from None
    return _get(cfg, key, list)


def _fmt(v):
    return repr(float(v))


def _csv_text(command, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = CSV_HEADERS[command]
    w.writerow(header)
    for r in rows:
        for name, v in zip(header, r):
            if not math.isfinite(v):
                # e.g. a_hat at a zero budget; CSV fields are always finite
                raise InputError(f"{name}: non-finite value at {header[0]}={r[0]!r}")
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _json_text(obj):
    def clean(o):
        if isinstance(o, dict):
            return {str(k): clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        if isinstance(o, np.ndarray):
            return clean(o.tolist())
        if isinstance(o, (bool, np.bool_)):
            return bool(o)
        if isinstance(o, (int, np.integer)):
            return int(o)
        if isinstance(o, (float, np.floating)):
            o = float(o)
            return o if math.isfinite(o) else repr(o)
        return o
    return json.dumps(clean(obj), indent=2, sort_keys=True) + "\n"


def _market(cfg, theta=None):
    return gbm.GbmMarket(_get(cfg, "s0"), _get(cfg, "sigma"),
                         _get(cfg, "theta") if theta is None else theta, _get(cfg, "T", default=1.0))


def _load_instance(cfg, base):
    inst = cfg.get("instance")
    if isinstance(inst, str):
        path = Path(inst)
        if not path.is_absolute():
            path = base / path
        if not path.exists():
            raise InputError(f"instance: file {inst!r} not found")
        instance = finite.load_instance(path)
    elif isinstance(inst, dict):
        instance = finite.FiniteTestInstance.from_dict(inst)
    else:
        raise InputError("instance: expected a file path or an inline object")
    if "x" in cfg:
        instance = instance.with_budget(_get(cfg, "x"))
    return instance


# ---- commands: each returns (artifact text, summary line) -----------------

def cmd_finite_solve(cfg, ctx):
    inst = _load_instance(cfg, ctx["base"])
    rand = finite.solve_randomized(inst)
    pure = finite.solve_pure(inst)
    holds, threshold = finite.positivity_check(inst)
    out = {
        "instance": inst.to_dict(),
        "V": rand.value,
        "V1": pure.value,
        "randomized": rand.to_dict(),
        "pure": pure.to_dict(),
        "positivity": {"holds": holds, "threshold": threshold},
    }
    return _json_text(out), f"V={rand.value:.10g} V1={pure.value:.10g}"


def cmd_gbm_curve(cfg, ctx):
    bench = gbm.PowerBenchmark(_get(cfg, "beta", default=1.0), _get(cfg, "p", default=1.0))
    thetas = _grid(cfg, "thetas") if "thetas" in cfg else [_get(cfg, "theta")]
    xs = _grid(cfg, "xs")
    rows = []
    for th in thetas:
        m = _market(cfg, th)
        for x in xs:
            r = gbm.success_probability(m, bench, x)
            rows.append((x, th, r.v, r.a_hat))
    return _csv_text("gbm-curve", rows), f"{len(rows)} rows"


def cmd_gbm_beta_curve(cfg, ctx):
    m = _market(cfg)
    bench = gbm.PowerBenchmark(1.0, _get(cfg, "p", default=1.0))
    x = _get(cfg, "x")
    rows = [(b, gbm.vtilde_beta(m, bench, x, b)) for b in _grid(cfg, "betas")]
    return _csv_text("gbm-beta-curve", rows), f"{len(rows)} rows"


def cmd_etf_surface(cfg, ctx):
    m = _market(cfg)
    l0 = _get(cfg, "l0", default=1.0)
    ps, xs = _grid(cfg, "ps"), _grid(cfg, "xs")
    table = {}
    for p in ps:
        bench = gbm.etf_benchmark(m, gbm.EtfSpec(l0, p))
        for x in xs:
            table[(p, x)] = gbm.success_probability(m, bench, x).v
    rows = [(p, x, table[(p, x)]) for p in ps for x in xs]
    summary = f"{len(rows)} rows"
    if m.theta == 0:
        gaps = [abs(table[(p, x)] - table[(-p, x)]) for (p, x) in table if (-p, x) in table]
        if gaps:
            summary += f"; max |V(p) - V(-p)| = {max(gaps):.3g}"
    return _csv_text("etf-surface", rows), summary


def _dual_spec(cfg):
    spec = _get(cfg, "spec", dict)
    if "lognormal" in spec:
        d = _get(spec, "lognormal", dict)
        return dual.LognormalSpec(_get(d, "m"), _get(d, "s"))
    if "gbm" in spec:
        d = _get(spec, "gbm", dict)
        bench = gbm.PowerBenchmark(_get(d, "beta", default=1.0), _get(d, "p", default=1.0))
        return dual.LognormalSpec.from_gbm(_market(d), bench)
    raise InputError("spec: expected a 'lognormal' or 'gbm' entry")


def cmd_dual_eval(cfg, ctx):
    spec = _dual_spec(cfg)
    mode = cfg.get("mode", "closed_form")
    if mode not in dual.MODES:
        raise InputError(f"mode: expected one of {dual.MODES}, got {mode!r}")
    res = dual.minimize_dual(spec, _get(cfg, "x"), mode,
                             n_paths=_get(cfg, "n_paths", int, default=100_000),
                             rng=RngStream(ctx["seed"]))
    out = {"v": res.v, "a_hat": res.a_hat, "q_at_a_hat": res.q_at_a_hat,
           "std_error": res.std_error, "mode": mode}
    return _json_text(out), f"v={res.v:.10g} a_hat={res.a_hat:.10g}"


def _model(cfg):
    return factor.FactorModel.from_dict(_get(cfg, "model", dict, default={"preset": "bounded-tanh"}))


def _sim(cfg, seed):
    return factor.SimConfig(_get(cfg, "n_paths", int, default=100_000),
                            _get(cfg, "n_steps", int, default=50),
                            _get(cfg, "T", default=1.0), RngStream(seed))


def cmd_mmm_scan(cfg, ctx):
    model = _model(cfg)
    b = _get(cfg, "benchmark", dict, default={"beta": 1.0, "delta": 0})
    bench = factor.Benchmark(_get(b, "beta", default=1.0), _get(b, "delta", int, default=0))
    res = factor.mmm_scan(model, _sim(cfg, ctx["seed"]), _get(cfg, "x"), bench,
                          _grid(cfg, "lambdas"))
    return _csv_text("mmm-scan", res.table()), f"argmin lambda = {res.argmin:g}"


def cmd_comparison_check(cfg, ctx):
    def steps(key):
        v = cfg.get(key)
        if v is None:
            raise InputError(f"{key}: missing from config")
        return _get(cfg, key, list) if isinstance(v, list) else _get(cfg, key)

    rep = factor.comparison_lemma_check(steps("a"), steps("b"), cfg.get("psi", "put"),
                                        _sim(cfg, ctx["seed"]), k=_get(cfg, "k", default=1.0))
    out = {"lhs": rep.lhs, "lhs_se": rep.lhs_se, "rhs": rep.rhs, "rhs_se": rep.rhs_se,
           "diff_se": rep.diff_se, "holds": rep.holds}
    return _json_text(out), f"lhs={rep.lhs:.6g} rhs={rep.rhs:.6g} holds={rep.holds}"


def _hjb_setup(cfg):
    model = _model(cfg)
    d = dict(_get(cfg, "hjb", dict, default={}))
    align = bool(d.pop("align", False))
    hcfg = hjb.HjbConfig.from_dict(d)
    if align:
        hcfg = hjb.HjbConfig.aligned(model, **hcfg.kwargs())
    return model, hcfg


def cmd_hjb_solve(cfg, ctx):
    model, hcfg = _hjb_setup(cfg)
    sol = hjb.solve_hjb(model, hcfg)
    out = ctx["output"]
    if out is not None:
        sol.write_npz(out.with_suffix(".npz"))
    buf = io.StringIO()
    sol.write_csv(buf, k=0)
    d = sol.diagnostics
    return buf.getvalue(), (f"max bound violation {d['max_bound_violation']:.2g}, "
                            f"max z increase {d['max_z_increase']:.2g}")


def cmd_hjb_query(cfg, ctx):
    model, hcfg = _hjb_setup(cfg)
    queries = cfg.get("queries")
    if not isinstance(queries, list) or not queries:
        raise InputError("queries: expected a nonempty list of {t, s, y, x}")
    sol = hjb.solve_hjb(model, hcfg)
    rows = []
    for i, q in enumerate(queries):
        if not isinstance(q, dict):
            raise InputError(f"queries[{i}]: expected an object")
        sq = hjb.SuccessQuery(_get(q, "t", default=0.0), _get(q, "s"), _get(q, "y", default=0.0), _get(q, "x"))
        v, a = hjb.success_from_U(sol, sq)
        rows.append((sq.t, sq.s, sq.y, sq.x, v, a))
    return _csv_text("hjb-query", rows), f"{len(rows)} queries"


COMMANDS = {
    "finite-solve": (cmd_finite_solve, ".json"),
    "gbm-curve": (cmd_gbm_curve, ".csv"),
    "gbm-beta-curve": (cmd_gbm_beta_curve, ".csv"),
    "etf-surface": (cmd_etf_surface, ".csv"),
    "dual-eval": (cmd_dual_eval, ".json"),
    "mmm-scan": (cmd_mmm_scan, ".csv"),
    "comparison-check": (cmd_comparison_check, ".json"),
    "hjb-solve": (cmd_hjb_solve, ".csv"),
    "hjb-query": (cmd_hjb_query, ".csv"),
}


def _resolve_output(path):
    if path is None:
        return None
    p = Path(path)
    root = os.environ.get(OUTPUT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


def build_parser():
    ap = argparse.ArgumentParser(prog="outperf", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--output", help="artifact path (default: from config, else stdout)")
    ap.add_argument("--seed", type=int, help="override the config seed")
    return ap


def run(argv=None, stdout=None, stderr=None):
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = build_parser().parse_args(argv)
    fn, suffix = COMMANDS[args.command]
    try:
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            raise InputError(f"config: file {args.config!r} not found")
        try:
            cfg = json.loads(cfg_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"config: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        if not isinstance(cfg, dict):
            raise InputError("config: expected a JSON object")
        seed = args.seed if args.seed is not None else _get(cfg, "seed", int, default=0, required=False)
        if not 0 <= seed < 2**64:
            raise InputError(f"seed: must be a 64-bit unsigned integer, got {seed}")
        output = _resolve_output(args.output or cfg.get("output"))
        if output is not None:
            output.parent.mkdir(parents=True, exist_ok=True)
        ctx = {"seed": seed, "base": cfg_path.parent, "output": output}
        text, summary = fn(cfg, ctx)
        if output is None:
            stdout.write(text)
            print(f"{args.command}: {summary}", file=stderr)
        else:
            if output.suffix == "":
                output = output.with_suffix(suffix)
            with open(output, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            print(f"{args.command}: {summary} -> {output}", file=stdout)
        return 0
    except (ValueError, KeyError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=stderr)
        return 1
    except (RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=stderr)
        return 2


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
