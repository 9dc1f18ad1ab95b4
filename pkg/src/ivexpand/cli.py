"""Command-line interface.

Subcommands::

    ivexpand price  --model M [params] --T T --k K [--order N]   u_bar_N and the reference price
    ivexpand iv     --model M [params] --T T --k K [--order N]   sigma_bar_N and the reference vol
    ivexpand taylor --model M [params] [--order N]               d_T^q d_k^m sigma_bar_N at expiry
    ivexpand verify table1 [--no-numerical]                      the CEV ATM time-slope table
    ivexpand verify order STUDY.ini                              one convergence-order study
    ivexpand models list

Model parameters are passed as flags (``--sigma``, ``--beta``, ``--kappa``,
``--theta``, ``--delta``, ``--rho``, ``--s0``, ``--y0``, ``--radius``,
``--eta``); ``models list`` shows which ones each model accepts.

Study files are INI::

    [model]
    name = heston
    kappa = 1
    theta = 0.04
    delta = 1
    rho = -0.5

    [expansion]
    order = 2          ; N
    q = 0              ; derivative order in T
    m = 1              ; derivative order in k
    lambda = 1         ; parabolic ray k = x0 + lambda sqrt(M tau)
    reference = heston ; optional, defaults to the model's own pricer

    [grid]
    levels = 7
    tau0 = 0.1
    first_level = 3    ; tau_p = tau0 2^-p for p = first_level, first_level + 1, ...

    [output]
    format = csv       ; or json
    path = report.csv  ; optional, stdout when absent

Exit codes: 0 success, 1 a verification ran but did not pass, 2 invalid
input, 3 numerical failure. Output is written only after the whole
computation succeeded. The default worker count comes from the
IVEXPAND_THREADS environment variable.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import sys
import warnings

from .errors import BranchInstability, ExpansionError, NoConvergence, OutOfArbitrageBounds
from .harness import ConvergenceStudySpec, run_convergence, run_table1
from .iv_expansion import iv_taylor_coeffs, sigma_bar_N
from .models import MODEL_REGISTRY, build_model, model_from_config, read_config
from .price_expansion import ExpansionContext, price_bar_N
from .reference import reference_iv, reference_price

EXIT_OK, EXIT_FAILED_CHECK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2, 3
MODEL_PARAMS = sorted({p for _, schema in MODEL_REGISTRY.values() for p in schema})
NUMERICAL_ERRORS = (ExpansionError, NoConvergence, BranchInstability, OutOfArbitrageBounds,
                    ArithmeticError)


class _ParserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting, so cli_main owns the exit code."""

    def error(self, message):
        raise _ParserError(f"{self.prog}: error: {message}")


# output ------------------------------------------------------------------------
def _num(v):
    """Shortest round-trip text for floats; keeps CSV bytes deterministic."""
    if isinstance(v, bool) or not isinstance(v, float):
        return v
    return repr(float(v))


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_json_safe(x) for x in v]
    return v


def render(rows: list[dict], fmt: str) -> str:
    if fmt == "json":
        return json.dumps(_json_safe(rows), indent=2, ensure_ascii=False, allow_nan=False) + "\n"
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _num(v) for k, v in row.items()})
    return buf.getvalue()


def _emit(text: str, path: str | None, out) -> None:
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        out.write(text)


# parser --------------------------------------------------------------------------
def _model_parent() -> argparse.ArgumentParser:
    parent = _Parser(add_help=False)
    parent.add_argument("--model", required=True, choices=sorted(MODEL_REGISTRY))
    for name in MODEL_PARAMS:
        parent.add_argument(f"--{name}", default=None)
    parent.add_argument("--order", "-N", type=int, default=2)
    parent.add_argument("--mode", choices=("symbolic", "numeric"), default=None)
    return parent


def _output_parent() -> argparse.ArgumentParser:
    parent = _Parser(add_help=False)
    parent.add_argument("--format", choices=("csv", "json"), default="csv")
    parent.add_argument("--output", "-o", default=None, help="file path (default stdout)")
    return parent


def build_parser() -> argparse.ArgumentParser:
    model, output = _model_parent(), _output_parent()
    parser = _Parser(prog="ivexpand", description="Implied-volatility expansions for LSV models.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, what in (("price", "expanded and reference call price"),
                       ("iv", "expanded and reference implied vol")):
        p = sub.add_parser(name, parents=[model, output], help=what)
        p.add_argument("--T", type=float, required=True, help="maturity (valuation time 0)")
        p.add_argument("--k", type=float, required=True, help="log-strike")
        p.add_argument("--reference", default=None, help="reference pricer: bs, cev, heston, mc")
        p.add_argument("--no-reference", action="store_true")

    sub.add_parser("taylor", parents=[model, output], help="IV Taylor coefficients at expiry")

    verify = sub.add_parser("verify", help="reproduction checks")
    vsub = verify.add_subparsers(dest="check", required=True, parser_class=_Parser)
    t1 = vsub.add_parser("table1", parents=[output], help="CEV ATM time-slope table")
    t1.add_argument("--no-numerical", action="store_true", help="skip the finite-difference column")
    t1.add_argument("--threads", type=int, default=None)
    order = vsub.add_parser("order", parents=[output], help="convergence-order study from an INI file")
    order.add_argument("spec_file")
    order.add_argument("--threads", type=int, default=None)

    models = sub.add_parser("models", help="model registry")
    msub = models.add_subparsers(dest="action", required=True, parser_class=_Parser)
    msub.add_parser("list", parents=[output])
    return parser


# commands ------------------------------------------------------------------------
def _context(args) -> ExpansionContext:
    params = {p: getattr(args, p) for p in MODEL_PARAMS if getattr(args, p) is not None}
    model = build_model(args.model, **params)
    mode = args.mode or ("symbolic" if model.time_homogeneous else "numeric")
    return ExpansionContext(model, args.order, mode=mode)


def _cmd_point(args, kind: str) -> list[dict]:
    ctx = _context(args)
    if kind == "price":
        value, ref = price_bar_N(ctx, args.T, args.k), reference_price
    else:
        value, ref = sigma_bar_N(ctx, args.T, args.k), reference_iv
    row = {"model": ctx.model.name, "N": ctx.N, "T": args.T, "k": args.k, kind: float(value)}
    if kind == "iv":
        row["extrapolated"] = value.extrapolated
    if not args.no_reference:
        reference = float(ref(ctx.model, args.T, args.k, args.reference))
        row["reference"] = reference
        row["difference"] = float(value) - reference
    return [row]


def _cmd_taylor(args) -> list[dict]:
    table = iv_taylor_coeffs(_context(args))
    return [{"q": q, "m": m, "value": v} for (q, m), v in table.rows()]


def _cmd_table1(args) -> tuple[list[dict], bool]:
    rows = run_table1(numerical=not args.no_numerical, threads=args.threads)
    out = [{"beta": r.beta, "numerical": r.numerical, "taylor": r.taylor, "durrleman": r.durrleman,
            "closed_form": r.closed_form, "taylor_pass": "pass" if r.taylor_pass else "FAIL"}
           for r in rows]
    return out, all(r.taylor_pass for r in rows)


def study_from_config(cfg: configparser.ConfigParser) -> ConvergenceStudySpec:
    model = model_from_config(cfg)
    exp = cfg["expansion"] if "expansion" in cfg else {}
    grid = cfg["grid"] if "grid" in cfg else {}
    defaults = ConvergenceStudySpec.__dataclass_fields__
    return ConvergenceStudySpec(
        model,
        N=int(exp.get("order", 2)),
        q=int(exp.get("q", 0)),
        m=int(exp.get("m", 0)),
        lam=float(exp.get("lambda", defaults["lam"].default)),
        levels=int(grid.get("levels", defaults["levels"].default)),
        tau0=float(grid.get("tau0", defaults["tau0"].default)),
        first_level=int(grid.get("first_level", defaults["first_level"].default)),
        method=exp.get("reference") or None,
        margin=float(exp.get("margin", defaults["margin"].default)),
    )


def _cmd_order(args) -> tuple[list[dict], bool, str, str | None]:
    cfg = read_config(args.spec_file)
    spec = study_from_config(cfg)
    out_cfg = cfg["output"] if "output" in cfg else {}
    fmt = out_cfg.get("format", args.format)
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown output format {fmt!r}")
    report = run_convergence(spec, threads=args.threads)
    rows = []
    for i, (tau, k, err) in enumerate(zip(report.taus, report.strikes, report.errors)):
        rows.append({"level": i, "tau": tau, "k": k, "error": err, "signed_error": report.signed[i],
                     "in_fit": i >= report.fit_start, "note": report.failures.get(i, "")})
    summary = {"slope": report.slope, "predicted": report.predicted, "r2": report.r2,
               "status": report.status}
    if fmt == "json":
        text = render([{"levels": rows, "summary": summary}], "json")
    else:
        text = render(rows, "csv") + "# " + ",".join(f"{k}={_num(v)}" for k, v in summary.items()) + "\n"
    return rows, report.passed, text, args.output or out_cfg.get("path")


def _cmd_models() -> list[dict]:
    rows = []
    for name, (builder, schema) in sorted(MODEL_REGISTRY.items()):
        doc = (builder.__doc__ or "").strip().splitlines()
        rows.append({"name": name, "params": " ".join(sorted(schema)), "description": doc[0] if doc else ""})
    return rows


def cli_main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _ParserError as exc:
        stderr.write(parser.format_usage() + str(exc) + "\n")
        return EXIT_INVALID
    code = EXIT_OK
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            if args.command in ("price", "iv"):
                text, path = render(_cmd_point(args, args.command), args.format), args.output
            elif args.command == "taylor":
                text, path = render(_cmd_taylor(args), args.format), args.output
            elif args.command == "models":
                text, path = render(_cmd_models(), args.format), args.output
            elif args.check == "table1":
                rows, ok = _cmd_table1(args)
                text, path = render(rows, args.format), args.output
                code = EXIT_OK if ok else EXIT_FAILED_CHECK
            else:
                _, ok, text, path = _cmd_order(args)
                code = EXIT_OK if ok else EXIT_FAILED_CHECK
    except NUMERICAL_ERRORS as exc:
        stderr.write(f"numerical failure: {type(exc).__name__}: {exc}\n")
        return EXIT_NUMERICAL
    except (ValueError, KeyError, TypeError, OSError, configparser.Error) as exc:
        stderr.write(f"invalid input: {exc}\n")
        return EXIT_INVALID
    for w in caught:
        stderr.write(f"warning: {w.category.__name__}: {w.message}\n")
    _emit(text, path, stdout)
    return code


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
