"""Command-line front end: ``analyze``, ``select`` and ``simulate``.

Exit codes: 0 success (NA standard errors included), 2 configuration error,
3 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .dataset import DataError, TrialDataset, encode_treatment, load_csv, missingness_summary, write_csv
from .estimators import aipw, ancova, anhecova, format_csv, format_json, format_table, simple_estimator
from .glm import get_link
from .imputation import ImputationSpec, UnsupportedMethodError, impute
from .selection import SelectionSpec, select
from . import simulation as sim

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3

DEFAULTS = {
    "var_sel_method": "Lasso",
    "k": 1,
    "xi": 0.25,
    "pre_alpha": 0.05,
    "conf_level": 0.95,
    "mi_method": "cc",
    "seed": 4399,
    "trt_name": "1",
    "ctrl_name": "0",
    "outcome_type": "continuous",
}


class ConfigError(ValueError):
    pass


def _add_data_args(p: argparse.ArgumentParser):
    p.add_argument("data", help="CSV file with a header row")
    p.add_argument("--outcome-col", default="Y", help="outcome column (default Y)")
    p.add_argument("--treatment-col", default="A", help="treatment column (default A)")
    p.add_argument("--trt-name", default=DEFAULTS["trt_name"], help="treatment label in the treatment column")
    p.add_argument("--ctrl-name", default=DEFAULTS["ctrl_name"], help="control label in the treatment column")
    p.add_argument("--outcome-type", choices=("continuous", "binary"), default=DEFAULTS["outcome_type"])
    p.add_argument("--var-sel-method", default=DEFAULTS["var_sel_method"],
                   help="No, Lasso, A.Lasso, Corr.k, Corr.xi or Pre.test")
    p.add_argument("--k", type=int, default=DEFAULTS["k"], help="covariates kept by Corr.k")
    p.add_argument("--xi", type=float, default=DEFAULTS["xi"], help="correlation threshold for Corr.xi")
    p.add_argument("--pre-alpha", type=float, default=DEFAULTS["pre_alpha"], help="level for Pre.test")
    p.add_argument("--lasso-family", choices=("gaussian", "binomial"), default=None)
    p.add_argument("--mi-method", default=DEFAULTS["mi_method"], help="cc, mice, ipw or missInd")
    p.add_argument("--seed", type=int, default=DEFAULTS["seed"])
    p.add_argument("--format", choices=("text", "csv", "json"), default="text")
    p.add_argument("--output", default=None, help="write to this file instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rctadjust",
                                     description="Covariate-adjusted treatment effects for randomized trials")
    parser.add_argument("--config", default=None, help="flat key=value file of flag defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="estimate the ATE with all four estimators")
    _add_data_args(a)
    a.add_argument("--out1-model-aipw", default=None, help="treated-arm link: linear, logit, probit, log, cloglog")
    a.add_argument("--out0-model-aipw", default=None, help="control-arm link")
    a.add_argument("--conf-level", type=float, default=DEFAULTS["conf_level"])
    a.add_argument("--sidecar", default=None, help="JSON file for selection and potential means")

    s = sub.add_parser("select", help="run imputation and covariate selection only")
    _add_data_args(s)
    s.add_argument("--export-csv", default=None,
                   help="write the analysis dataset restricted to the pooled selection")

    m = sub.add_parser("simulate", help="Monte Carlo study on the synthetic design")
    m.add_argument("--outcome", choices=("continuous", "binary"), default="continuous")
    m.add_argument("--delta", choices=("linear", "nonlinear"), default="linear")
    m.add_argument("--linear-delta-reading", choices=("as_written", "additive"), default="as_written")
    m.add_argument("--n", type=int, default=500)
    m.add_argument("--m", type=int, default=500)
    m.add_argument("--seed", type=int, default=DEFAULTS["seed"])
    m.add_argument("--workers", type=int, default=1)
    m.add_argument("--selections", default=None,
                   help="comma list such as No,Lasso,Corr.k=3,Pre.test=0.1 (default: the full menu)")
    m.add_argument("--oracle-only", action="store_true")
    m.add_argument("--oracle-n", type=int, default=10 ** 6)
    m.add_argument("--oracle-reps", type=int, default=20)
    m.add_argument("--output", default=None, help="file prefix for <prefix>.json and <prefix>.csv")
    m.add_argument("--dump-replications", action="store_true",
                   help="also write <prefix>.replications.csv")
    return parser


def read_config(path: str) -> dict:
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ConfigError(f"--config: cannot read {path}: {e.strerror}") from None
    for no, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"--config: line {no} is not key=value")
        key, val = (t.strip() for t in line.split("=", 1))
        out[key.replace("-", "_").replace(".", "_").lower()] = val
    return out


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    pre, _ = parser.parse_known_args(argv)
    if pre.config:
        conf = read_config(pre.config)
        subparser = parser._subparsers._group_actions[0].choices[pre.command]
        known = {act.dest: act for act in subparser._actions}
        for key, val in conf.items():
            if key not in known:
                raise ConfigError(f"--config: unknown key {key!r} for {pre.command}")
            act = known[key]
            if act.type is not None:
                try:
                    val = act.type(val)
                except ValueError:
                    raise ConfigError(f"--config: bad value for {key}: {val!r}") from None
            elif isinstance(act, argparse._StoreTrueAction):
                val = val.lower() in ("1", "true", "yes")
            subparser.set_defaults(**{key: val})
    return parser.parse_args(argv)


def _selection_spec(args, outcome_binary: bool) -> SelectionSpec:
    family = args.lasso_family or ("binomial" if outcome_binary else "gaussian")
    try:
        return SelectionSpec(args.var_sel_method, k=args.k, xi=args.xi, alpha=args.pre_alpha,
                             family=family, seed=args.seed)
    except ValueError as e:
        raise ConfigError(f"--var-sel-method/--k/--xi/--pre-alpha: {e}") from None


def _imputation_spec(args) -> ImputationSpec:
    try:
        return ImputationSpec(args.mi_method, seed=args.seed)
    except UnsupportedMethodError as e:
        raise ConfigError(f"--mi-method: {e}") from None
    except ValueError as e:
        raise ConfigError(f"--mi-method: {e}") from None


def _prepare(args):
    binary = args.outcome_type == "binary"
    sel_spec = _selection_spec(args, binary)
    imp_spec = _imputation_spec(args)
    ds = load_csv(args.data, args.outcome_col, args.treatment_col)
    trial = encode_treatment(ds, args.trt_name, args.ctrl_name)
    if binary:
        vals = trial.Y[trial.Y_observed]
        if not np.all((vals == 0) | (vals == 1)):
            raise DataError(f"--outcome-type binary needs 0/1 values in column {args.outcome_col}")
    imputed = impute(imp_spec, trial)
    selection = select(sel_spec, imputed.trial)
    return ds, trial, imputed, selection


def _emit(text: str, path):
    if not text.endswith("\n"):
        text += "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_analyze(args) -> int:
    binary = args.outcome_type == "binary"
    default_link = "logit" if binary else "linear"
    links = [args.out1_model_aipw or default_link, args.out0_model_aipw or default_link]
    for flag, lk in zip(("--out1-model-aipw", "--out0-model-aipw"), links):
        try:
            get_link(lk)
        except ValueError as e:
            raise ConfigError(f"{flag}: {e}") from None
    if not 0 < args.conf_level < 1:
        raise ConfigError("--conf-level must lie in (0, 1)")

    ds, trial, imputed, selection = _prepare(args)
    t = imputed.trial
    A, Y, X, w = t.A, t.Y, t.X, imputed.row_weights
    cl = args.conf_level
    rows = [
        simple_estimator(A, Y, w, cl),
        ancova(A, Y, X[:, selection.pooled], w, cl),
        anhecova(A, Y, X[:, selection.pooled], w, cl),
    ]
    est, pm = aipw(A, Y, X[:, selection.per_arm[1]], X[:, selection.per_arm[0]],
                   links[0], links[1], w, cl)
    rows.append(est)

    formatter = {"text": format_table, "csv": format_csv, "json": format_json}[args.format]
    _emit(formatter(rows), args.output)

    sidecar = args.sidecar or (f"{args.output}.sidecar.json" if args.output else None)
    if sidecar:
        miss = missingness_summary(trial)
        doc = {
            "selection": selection.to_dict(),
            "potential_means": pm.to_dict(),
            "imputation": {
                "method": _imputation_spec(args).method,
                "dropped_rows": imputed.dropped_rows.tolist(),
                "added_columns": list(imputed.added_columns),
                "notes": list(imputed.notes),
            },
            "missingness": {
                "outcome_missing": miss.outcome_missing,
                "covariate_missing": miss.covariate_missing,
                "complete_rows": miss.complete_rows,
                "n_rows": miss.n_rows,
            },
            "aipw_links": {"arm1": links[0], "arm0": links[1]},
        }
        Path(sidecar).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_select(args) -> int:
    ds, trial, imputed, selection = _prepare(args)
    if args.format == "json":
        text = selection.to_json() + "\n"
    else:
        d = selection.to_dict()
        sep = "," if args.format == "csv" else ", "
        text = "".join(f"{key}: {sep.join(d[key])}\n" for key in ("pooled", "arm0", "arm1"))
        text += "".join(f"warning: {m}\n" for m in d["warnings"])
    _emit(text, args.output)
    if args.export_csv:
        t = imputed.trial
        labels = np.where(t.A == 1, str(args.trt_name), str(args.ctrl_name))
        idx = selection.pooled
        out = TrialDataset(labels, t.Y, t.Y_observed, t.X[:, idx], t.X_observed[:, idx],
                           [t.covariate_names[j] for j in idx])
        write_csv(out, args.export_csv, args.outcome_col, args.treatment_col)
    return EXIT_OK


def parse_selections(text: str | None):
    if text is None:
        return sim.DEFAULT_SELECTIONS
    specs = []
    for tok in (t.strip() for t in text.split(",")):
        if not tok:
            continue
        name, _, val = tok.partition("=")
        kw = {}
        key = name.lower()
        try:
            if val:
                if key in ("corr.k", "corr_k"):
                    kw["k"] = int(val)
                elif key in ("corr.xi", "corr_xi"):
                    kw["xi"] = float(val)
                elif key in ("pre.test", "pre_test"):
                    kw["alpha"] = float(val)
                else:
                    raise ValueError(f"{name} takes no parameter")
            specs.append(SelectionSpec(name, **kw))
        except ValueError as e:
            raise ConfigError(f"--selections: {e}") from None
    if not specs:
        raise ConfigError("--selections: empty list")
    return tuple(dict.fromkeys(specs))


def cmd_simulate(args) -> int:
    try:
        spec = sim.DgpSpec(args.outcome, args.delta, args.n, args.seed, args.linear_delta_reading)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    if args.m < 1 or args.workers < 1 or args.oracle_n < 1 or args.oracle_reps < 1:
        raise ConfigError("--m, --workers, --oracle-n and --oracle-reps must be >= 1")
    selections = parse_selections(args.selections)

    oracle = sim.true_ate_oracle(spec, args.oracle_n, args.oracle_reps)
    print(f"oracle tau = {oracle.tau:.6g} (MC SE {oracle.mc_se:.2g}, "
          f"{args.oracle_reps} x {args.oracle_n} draws)")
    if args.outcome == "continuous" and args.delta == "linear" and abs(oracle.tau - 8.15) > 0.1:
        print(f"note: oracle tau differs from 8.15 under the {args.linear_delta_reading} "
              "reading of the linear effect", file=sys.stderr)
    if args.oracle_only:
        return EXIT_OK

    methods = sim.standard_methods(args.outcome, selections)
    report = sim.run_monte_carlo(spec, methods, args.m, args.seed, oracle.tau, args.workers)
    summary = report.summary_csv()
    if args.output:
        Path(f"{args.output}.json").write_text(report.to_json() + "\n", encoding="utf-8")
        Path(f"{args.output}.csv").write_text(summary, encoding="utf-8")
        if args.dump_replications:
            Path(f"{args.output}.replications.csv").write_text(report.replications_csv(),
                                                               encoding="utf-8")
    sys.stdout.write(summary)
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "select": cmd_select, "simulate": cmd_simulate}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        return COMMANDS[args.command](args)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_CONFIG
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
