"""Command line interface.

Subcommands ``fit``, ``simulate``, ``sphere``, ``pvclust`` and ``mixture-sim``
share ``--seed``, ``--threads``, ``--format json|tsv``, ``--config PATH`` and
``--output PATH``.

Settings resolve as command-line flags, then the config file, then built-in
defaults. The config file is a JSON or YAML mapping whose keys are the long
flag names of the subcommand with dashes replaced by underscores (for
example ``B``, ``candidates``, ``inner_order``). Unknown keys are rejected.
Lists may be given as YAML/JSON lists or as comma-separated strings.

Data goes to standard output (or ``--output``), progress and warnings to
standard error. Results do not depend on ``--threads``.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .bootstrap_engine import CountTable, DatasetMatrix, ScaleGrid, default_scale_grid, set_threads
from .hclust import METRICS, annotated_newick, mixture_study, mixture_sim, pvclust_run, report_rows
from .pvalues import PValueReport, p_values_B
from .region_oracle import (
    DEFAULT_CONFIG,
    METHODS,
    NAMED_REGIONS,
    TABLE_METHODS,
    OracleConfig,
    RegionSpec,
    doubled_test_limits,
    simulate_table,
    sphere_curve,
)
from .scaling_models import DEFAULT_CANDIDATES, DegenerateFit, select_model

logger = logging.getLogger("artifact")

EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_DEGENERATE = 3


class ConfigError(ValueError):
    pass


# ----------------------------------------------------------------------------
# value coercion
# ----------------------------------------------------------------------------

def _listify(v):
    if isinstance(v, (list, tuple)):
        return list(v)
    if isinstance(v, str):
        return [x.strip() for x in v.split(",") if x.strip()]
    return [v]


def str_list(v):
    return [str(x) for x in _listify(v)]


def float_list(v):
    return [float(x) for x in _listify(v)]


def int_list(v):
    return [int(x) for x in _listify(v)]


def boolean(v):
    if isinstance(v, bool):
        return v
    if isinstance(v, str) and v.lower() in ("true", "yes", "1", "false", "no", "0"):
        return v.lower() in ("true", "yes", "1")
    raise ValueError(f"not a boolean: {v!r}")


def optional_int(v):
    return None if v is None else int(v)


def choice(*options):
    def conv(v):
        if v not in options:
            raise ValueError(f"{v!r} is not one of {', '.join(options)}")
        return v

    return conv


SHARED = {
    "seed": (int, 0),
    "threads": (optional_int, None),
    "format": (choice("tsv", "json"), "tsv"),
    "output": (str, None),
}

SCHEMAS = {
    "fit": {
        "counts": (str, None),
        "complement": (boolean, False),
        "candidates": (str_list, list(DEFAULT_CANDIDATES)),
        "k": (int, 3),
        "tau2": (float, 1.0),
    },
    "simulate": {
        "region": (choice(*NAMED_REGIONS, "halfspace", "custom"), "concave-smooth"),
        "sign": (float, -1.0),
        "a": (float, 1.0),
        "methods": (str_list, list(TABLE_METHODS)),
        "alpha": (float, 0.1),
        "thetas": (float_list, [0.5 * i for i in range(8)]),
        "inner_order": (int, DEFAULT_CONFIG.inner_order),
        "panel_order": (int, DEFAULT_CONFIG.panel_order),
    },
    "sphere": {
        "gammas": (float_list, [-0.5, -1.0, -1.5]),
        "dims": (int_list, [10, 30, 100, 300, 1000]),
        "methods": (str_list, ["2BP", "2AU2", "2AU3", "SI2", "SI3"]),
        "alpha": (float, 0.1),
    },
    "pvclust": {
        "data": (str, None),
        "B": (int, 10000),
        "k": (int, 3),
        "tau2": (float, 1.0),
        "metric": (choice(*METRICS), "euclid_sq_mean"),
        "candidates": (str_list, list(DEFAULT_CANDIDATES)),
        "nprime": (int_list, None),
        "on_error": (choice("error", "skip"), "error"),
        "newick": (str, None),
    },
    "mixture-sim": {
        "a": (float, 0.0),
        "n": (int, 1000),
        "datasets": (int, 0),
        "B": (int, 1000),
        "alpha": (float, 0.1),
        "candidates": (str_list, list(DEFAULT_CANDIDATES)),
    },
}


def load_config(path) -> dict:
    """Read a JSON or YAML mapping from ``path``."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e.strerror}") from None
    if p.suffix.lower() == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}:{e.lineno}: {e.msg}") from None
    else:
        import yaml

        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ConfigError(f"{p}: {e}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    return data


def resolve(command: str, flags: dict, config: dict) -> dict:
    """Merge defaults, config values and explicit flags, validating every value.

    Raises:
        ConfigError: On an unknown key or a value of the wrong type.
    """
    schema = {**SHARED, **SCHEMAS[command]}
    unknown = sorted(set(config) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
    out = {}
    for key, (conv, default) in schema.items():
        if key in flags:
            raw, src = flags[key], "flag"
        elif key in config:
            raw, src = config[key], "config"
        else:
            out[key] = default
            continue
        try:
            out[key] = None if raw is None else conv(raw)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid {src} value for {key}: {e}") from None
    return out


# ----------------------------------------------------------------------------
# formatting
# ----------------------------------------------------------------------------

def _num(x):
    """Full-precision text for TSV cells; NA for missing values."""
    if x is None:
        return "NA"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return repr(x) if math.isfinite(x) else "NA"


def _jnum(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def _tsv(header, rows) -> str:
    lines = ["\t".join(header)]
    lines += ["\t".join(r) for r in rows]
    return "\n".join(lines) + "\n"


REPORT_FIELDS = ("z_H", "z_S", "t_hat", "gamma_hat", "p_bp", "p_au", "p_si", "model", "flags")


def _report_cells(rep: PValueReport):
    d = rep.to_dict()
    return [_num(d[f]) for f in REPORT_FIELDS[:7]] + [d["model"] or "NA", ",".join(d["flags"]) or "-"]


# ----------------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------------

def _read_counts(path) -> CountTable:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise OSError(f"cannot read counts {p}: {e.strerror}") from None
    try:
        if p.suffix.lower() == ".json":
            return CountTable.from_json(text)
        return CountTable.from_tsv(text)
    except ValueError as e:
        raise ValueError(f"{p}: {e}") from None


def cmd_fit(opts: dict):
    """Fit every candidate model to a count table and report p-values from the AIC-best fit."""
    if not opts["counts"]:
        raise ConfigError("fit needs a counts file")
    counts = _read_counts(opts["counts"])
    if opts["complement"]:
        counts = counts.complement()
    i1 = np.flatnonzero(np.abs(counts.sigma2 - 1.0) <= 1e-9)
    bp = float(counts.C[i1[0]] / counts.B[i1[0]]) if i1.size else math.nan
    status = 0
    try:
        if len(counts.sigma2) < 2:
            # one scale cannot separate the sigma-dependence from the level
            raise DegenerateFit("a count table needs at least two scales", counts.n_informative)
        best, fits = select_model(counts, opts["candidates"])
        rep = p_values_B(best, best.negated(), opts["k"], opts["tau2"], opts["tau2"], bp)
    except DegenerateFit as e:
        logger.warning("degenerate input: %s", e)
        best, fits = None, []
        rep = PValueReport(math.nan, math.nan, math.nan, math.nan, bp, math.nan, math.nan, {"degenerate_fit"})
        status = EXIT_DEGENERATE
    models = [{"model": f.spec.name, "npar": f.spec.npar, "aic": f.aic, "loglik": f.loglik,
               "converged": f.converged, "selected": best is not None and f is best,
               "beta": [float(b) for b in f.beta]} for f in fits]
    if opts["format"] == "json":
        text = json.dumps({"report": rep.to_dict(),
                           "models": [{**m, "aic": _jnum(m["aic"]), "loglik": _jnum(m["loglik"])}
                                      for m in models]}, indent=2) + "\n"
    else:
        text = _tsv(REPORT_FIELDS, [_report_cells(rep)])
        text += "\n" + _tsv(("model", "npar", "aic", "loglik", "converged", "selected", "beta"),
                            [[m["model"], str(m["npar"]), _num(m["aic"]), _num(m["loglik"]),
                              str(m["converged"]).lower(), str(m["selected"]).lower(),
                              ",".join(_num(b) for b in m["beta"])] for m in models])
    return text, status


def _region(opts) -> tuple[RegionSpec, str]:
    name = opts["region"]
    if name == "halfspace":
        return RegionSpec.halfspace(), name
    if name == "custom":
        return RegionSpec.curve(opts["sign"], opts["a"]), f"custom(sign={opts['sign']:g},a={opts['a']:g})"
    return RegionSpec.named(name), name


def _check_methods(methods):
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ConfigError(f"unknown method(s) {', '.join(bad)}; choose from {', '.join(METHODS)}")


def cmd_simulate(opts: dict):
    """Selective rejection percentages along the boundary of a planar region."""
    _check_methods(opts["methods"])
    region, name = _region(opts)
    cfg = OracleConfig(inner_order=opts["inner_order"], panel_order=opts["panel_order"])
    table = simulate_table(region, opts["methods"], opts["alpha"], cfg, thetas=opts["thetas"], name=name)
    if opts["format"] == "json":
        return json.dumps(table.to_dict(), indent=2) + "\n", 0
    return table.to_tsv(), 0


def cmd_sphere(opts: dict):
    """Selective rejection percentages on concave spheres of growing dimension."""
    _check_methods(opts["methods"])
    for g in opts["gammas"]:
        if g >= 0:
            raise ConfigError("gammas must be negative (concave sphere)")
    for d in opts["dims"]:
        if not 10 <= d <= 1000:
            raise ConfigError(f"dimension {d} outside [10, 1000]")
    rows = []
    for g in opts["gammas"]:
        for m in opts["methods"]:
            logger.info("sphere gamma=%g method=%s", g, m)
            for d, r in zip(opts["dims"], sphere_curve(m, g, opts["dims"], opts["alpha"])):
                rows.append({"gamma": g, "dim": d, "method": m, "percent": 100 * r})
        lim = doubled_test_limits(opts["alpha"], g)
        for m in opts["methods"]:
            key = m.rstrip("23") if m.startswith("2AU") else m
            if key in lim:
                rows.append({"gamma": g, "dim": "inf", "method": m, "percent": 100 * lim[key]})
            elif m.startswith("SI"):
                rows.append({"gamma": g, "dim": "inf", "method": m, "percent": 100 * opts["alpha"]})
    if opts["format"] == "json":
        return json.dumps({"alpha": opts["alpha"], "rows": rows}, indent=2) + "\n", 0
    return _tsv(("gamma", "dim", "method", "percent"),
                [[_num(r["gamma"]), str(r["dim"]), r["method"], f"{r['percent']:.2f}"] for r in rows]), 0


def _read_dataset(path) -> DatasetMatrix:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise OSError(f"cannot read data {p}: {e.strerror}") from None
    first = text.split("\n", 1)[0]
    delim = "\t" if "\t" in first else ","
    return DatasetMatrix.from_csv_text(text, delim, source=str(p))


def cmd_pvclust(opts: dict):
    """Cluster the columns of a data matrix and assess every cluster."""
    if not opts["data"]:
        raise ConfigError("pvclust needs a data file")
    data = _read_dataset(opts["data"])
    n = data.shape[0]
    grid = ScaleGrid.from_nprime(n, opts["nprime"]) if opts["nprime"] else default_scale_grid(n)
    logger.info("pvclust: %d rows, %d columns, %d scales, B=%d", n, data.shape[1], len(grid.sigma2), opts["B"])
    dend, reports = pvclust_run(data, grid, opts["B"], opts["seed"], opts["metric"], opts["candidates"],
                                opts["k"], opts["tau2"], opts["on_error"])
    rows = report_rows(reports)
    newick = annotated_newick(dend, reports)
    if opts["newick"]:
        Path(opts["newick"]).write_text(newick + "\n")
    if opts["format"] == "json":
        out = [{**r, "bp": _jnum(r["bp"]), "au": _jnum(r["au"]), "si": _jnum(r["si"]),
                "t": _jnum(r["t"]), "gamma": _jnum(r["gamma"]),
                "flags": [] if r["flags"] == "-" else r["flags"].split(",")} for r in rows]
        return json.dumps({"clusters": out, "newick": newick}, indent=2) + "\n", 0
    cols = ("cluster_id", "members", "bp", "au", "si", "t", "gamma", "model", "flags")
    body = _tsv(cols, [[str(r["cluster_id"]), r["members"]] + [_num(r[c]) for c in cols[2:7]]
                       + [r["model"], r["flags"]] for r in rows])
    return body + f"# newick\t{newick}\n", 0


def cmd_mixture_sim(opts: dict):
    """Write one simulated mixture dataset (tab-separated), or run the seeded selective-rejection study."""
    if opts["datasets"] <= 0:
        data = mixture_sim(opts["a"], opts["n"], opts["seed"])
        if opts["format"] == "json":
            return json.dumps({"columns": list(data.col_labels), "values": data.values.tolist()}) + "\n", 0
        return data.to_csv("\t"), 0

    def progress(i, total):
        logger.info("mixture study: %d / %d datasets", i, total)

    st = mixture_study(opts["a"], opts["n"], opts["datasets"], opts["B"], opts["seed"], opts["alpha"],
                       opts["candidates"], progress)
    rates = st.rates()
    sel = st.selection_probability()
    if opts["format"] == "json":
        return json.dumps({"a": st.a, "n_datasets": st.n_datasets, "alpha": st.alpha,
                           "selected": st.selected, "selection_probability": sel,
                           "rejections": st.rejections,
                           "rates": {m: {c: _jnum(v) for c, v in r.items()} for m, r in rates.items()}},
                          indent=2) + "\n", 0
    rows = []
    for c in st.selected:
        for m, r in rates.items():
            rows.append([c, m, str(st.selected[c]), str(st.rejections[m][c]), _num(r[c])])
    return _tsv(("cluster", "method", "selected", "rejected", "rate"), rows), 0


COMMANDS = {
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "sphere": cmd_sphere,
    "pvclust": cmd_pvclust,
    "mixture-sim": cmd_mixture_sim,
}


# ----------------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    shared = argparse.ArgumentParser(add_help=False, argument_default=S)
    g = shared.add_argument_group("shared options")
    g.add_argument("--seed", help="master random seed (default 0)")
    g.add_argument("--threads", help="worker threads; results do not depend on it")
    g.add_argument("--format", choices=("json", "tsv"), help="output format (default tsv)")
    g.add_argument("--config", help="JSON or YAML file with default settings")
    g.add_argument("--output", "-o", help="write results here instead of standard output")
    g.add_argument("--quiet", "-q", action="store_true", help="no progress messages")

    parser = argparse.ArgumentParser(prog="artifact", description="Multiscale bootstrap p-values.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[shared], argument_default=S,
                       help="fit scaling-law models to a count table and report p-values")
    p.add_argument("counts", nargs="?", help="count table (TSV with sigma2, nprime, B, C or JSON)")
    p.add_argument("--complement", action="store_const", const=True,
                   help="counts are for the selective region; use B - C for the hypothesis")
    p.add_argument("--candidates", help="comma-separated model names, e.g. poly.1,poly.2,poly.3,sing.3")
    p.add_argument("--k", help="Taylor terms (default 3)")
    p.add_argument("--tau2", help="expansion scale for both extrapolations (default 1)")

    p = sub.add_parser("simulate", parents=[shared], argument_default=S,
                       help="rejection-rate table for a planar region")
    p.add_argument("--region", help=f"one of {', '.join(NAMED_REGIONS)}, halfspace, custom")
    p.add_argument("--sign", help="boundary sign for --region custom (-1 concave, +1 convex)")
    p.add_argument("--a", help="boundary smoothness for --region custom (0 gives a cone)")
    p.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")
    p.add_argument("--alpha", help="significance level (default 0.1)")
    p.add_argument("--thetas", help="comma-separated boundary positions")
    p.add_argument("--inner-order", dest="inner_order", help="Legendre nodes per side of the kink")
    p.add_argument("--panel-order", dest="panel_order", help="Legendre nodes per unit panel")

    p = sub.add_parser("sphere", parents=[shared], argument_default=S,
                       help="selective rejection on concave spheres versus dimension")
    p.add_argument("--gammas", help="comma-separated negative mean curvatures, e.g. -0.5,-1,-1.5")
    p.add_argument("--dims", help="comma-separated dimensions in [10, 1000]")
    p.add_argument("--methods", help="comma-separated p-value families")
    p.add_argument("--alpha", help="significance level (default 0.1)")

    p = sub.add_parser("pvclust", parents=[shared], argument_default=S,
                       help="cluster columns and compute BP/AU/SI for each cluster")
    p.add_argument("data", nargs="?", help="comma- or tab-separated matrix with a header row of column labels")
    p.add_argument("--B", help="replicates per scale (default 10000)")
    p.add_argument("--k", help="Taylor terms (default 3)")
    p.add_argument("--tau2", help="expansion scale (default 1)")
    p.add_argument("--metric", help=f"one of {', '.join(METRICS)}")
    p.add_argument("--candidates", help="comma-separated model names")
    p.add_argument("--nprime", help="comma-separated replicate sizes (default: 13 log-spaced scales)")
    p.add_argument("--on-error", dest="on_error", help="error or skip replicates with undefined distances")
    p.add_argument("--newick", help="also write the annotated dendrogram to this file")

    p = sub.add_parser("mixture-sim", parents=[shared], argument_default=S,
                       help="simulate the three-column mixture or run the selective study")
    p.add_argument("--a", help="mixture mean shift (default 0)")
    p.add_argument("--n", help="rows per dataset (default 1000)")
    p.add_argument("--datasets", help="number of datasets for the study; 0 writes one dataset")
    p.add_argument("--B", help="replicates per scale in the study (default 1000)")
    p.add_argument("--alpha", help="significance level (default 0.1)")
    p.add_argument("--candidates", help="comma-separated model names")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    ns = vars(parser.parse_args(argv))
    command = ns.pop("command")
    quiet = ns.pop("quiet", False)
    config_path = ns.pop("config", None)
    logging.basicConfig(level=logging.WARNING if quiet else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        config = load_config(config_path) if config_path else {}
        opts = resolve(command, ns, config)
    except ConfigError as e:
        parser.error(str(e))
    try:
        set_threads(opts["threads"])
        text, status = COMMANDS[command](opts)
        if opts["output"]:
            Path(opts["output"]).write_text(text)
        else:
            sys.stdout.write(text)
    except ConfigError as e:
        print(f"artifact {command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as e:
        print(f"artifact {command}: error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return status


if __name__ == "__main__":
    sys.exit(main())
