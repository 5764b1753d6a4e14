"""Command-line front end: ``memshield <area> <command> [options]``.

Results go to stdout (or ``--out``) as JSON with an embedded run manifest,
or as CSV with a ``.manifest.json`` sidecar.  Exit codes: 0 success,
1 configuration or usage error, 2 internal invariant violation.
"""

from __future__ import annotations

import argparse
import io
import csv
import json
import math
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Sequence

from . import __version__
from .faultmodel import HOURS_PER_YEAR, ConfigError, FitTable, load_preset

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INTERNAL = 2


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # pragma: no cover - exercised via main
        self.print_usage(sys.stderr)
        raise UsageError(message)


# Number formatting and emission ------------------------------------------------------


def fmt_number(x: Any) -> str:
    """Six significant digits in scientific notation; ints stay exact."""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".5e")


def to_json(obj: Any, indent: int = 2, _level: int = 0) -> str:
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [pad + to_json(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if obj is None:
        return "null"
    if isinstance(obj, (bool, int, float)):
        return fmt_number(obj)
    return json.dumps(str(obj))


def _csv_cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, dict):
        return ";".join(f"{k}={x}" for k, x in v.items())
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return fmt_number(v).strip('"')
    return str(v)


def to_csv(rows: Sequence[dict]) -> str:
    if not rows:
        raise ConfigError("nothing to report")
    buf = io.StringIO()
    fields = list(rows[0])
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_csv_cell(r.get(k)) for k in fields])
    return buf.getvalue()


@dataclass
class RunManifest:
    argv: list[str]
    config: dict[str, Any]
    seed: int | None
    version: str = __version__
    outputs: list[str] = field(default_factory=list)
    created: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))

    def as_dict(self) -> dict[str, Any]:
        return {
            "argv": list(self.argv),
            "config": self.config,
            "seed": self.seed,
            "version": self.version,
            "outputs": list(self.outputs),
            "created": self.created,
        }


def emit_report(result: Any, manifest: RunManifest, fmt: str = "json", out: str | None = None) -> str:
    """Serialize ``result`` (dict or list of row dicts); write to ``out`` if given."""
    if result is None or (isinstance(result, (list, dict)) and not result):
        raise ConfigError("results are empty")
    if out:
        manifest.outputs = [out] + ([out + ".manifest.json"] if fmt == "csv" else [])
    if fmt == "json":
        text = to_json({"manifest": manifest.as_dict(), "result": result}) + "\n"
    elif fmt == "csv":
        rows = result if isinstance(result, list) else [result]
        text = to_csv(rows)
    else:
        raise ConfigError(f"unknown format {fmt!r}")
    if out:
        try:
            Path(out).write_text(text)
            if fmt == "csv":
                Path(out + ".manifest.json").write_text(to_json(manifest.as_dict()) + "\n")
        except OSError as exc:
            raise ConfigError(f"cannot write {out}: {exc.strerror}") from exc
    return text


# Helpers ------------------------------------------------------------------------------


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _names(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _fit_table(args: argparse.Namespace, default: str) -> FitTable:
    if getattr(args, "fit_file", None):
        try:
            text = Path(args.fit_file).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {args.fit_file}: {exc.strerror}") from exc
        try:
            return FitTable.loads(text)
        except ConfigError as exc:
            raise ConfigError(f"{args.fit_file}: {exc}") from None
    return load_preset(getattr(args, "preset", None) or default)


def _campaign_dict(res) -> dict[str, Any]:
    d = res.as_dict()
    d["failures"] = res.failures
    d["ci_low"] = res.ci_low
    d["ci_high"] = res.ci_high
    d["causes"] = dict(res.causes)
    return d


# Commands ---------------------------------------------------------------------------


def cmd_codes_probe(a: argparse.Namespace) -> tuple[Any, dict]:
    from .codes import detection_rate_probe

    frac = detection_rate_probe(a.codec, a.errors, a.mode, trials=a.trials, seed=a.seed)
    cfg = {"codec": a.codec, "errors": a.errors, "mode": a.mode, "trials": a.trials}
    return {**cfg, "detected_fraction": frac}, cfg


def cmd_archshield_provision(a: argparse.Namespace) -> tuple[Any, dict]:
    from .archshield import archshield_provision

    cfg = {"ber": a.ber, "capacity_bytes": int(a.capacity_gb * 2**30)}
    return archshield_provision(a.ber, cfg["capacity_bytes"]), cfg


def cmd_archshield_overflow(a: argparse.Namespace) -> tuple[Any, dict]:
    from .archshield import overflow_failure_probability, overflow_monte_carlo

    sets = [int(s) for s in _floats(a.sets)]
    rows = []
    for e in _floats(a.errors):
        analytic = overflow_failure_probability(e, a.groups, sets)
        mc = overflow_monte_carlo(int(e), a.groups, sets, a.runs, a.seed) if a.runs else {}
        for k in sets:
            rows.append({
                "errors": int(e),
                "groups": a.groups,
                "overflow_sets": k,
                "p_fail_analytic": analytic[k],
                "p_fail_mc": mc[k] / a.runs if a.runs else None,
                "runs": a.runs,
            })
    return rows, {"groups": a.groups, "errors": a.errors, "sets": sets, "runs": a.runs}


def cmd_xed_simulate(a: argparse.Namespace) -> tuple[Any, dict]:
    from .simkernel import run_campaign
    from .xed import xed_config

    cfg = xed_config(
        a.scheme,
        fit_table=_fit_table(a, "sridharan12"),
        lifetime_hours=a.years * HOURS_PER_YEAR,
        scrub_interval_hours=a.scrub_hours,
        scaling_ber=a.scaling_ber,
        seed=a.seed,
    )
    res = run_campaign(cfg, a.trials)
    conf = {"scheme": a.scheme, "fit_table": cfg.fit_table.name, "years": a.years,
            "scrub_hours": a.scrub_hours, "scaling_ber": a.scaling_ber, "trials": a.trials}
    return _campaign_dict(res), conf


def _citadel_cfg(a: argparse.Namespace, scheme: str, tsv_fit: float):
    from .citadel import STACKS, SwapMode, citadel_config

    try:
        stack = STACKS[a.org]
    except KeyError:
        raise ConfigError(f"unknown organization {a.org!r}; known: {sorted(STACKS)}") from None
    return citadel_config(
        scheme,
        stack,
        tsv_fit=tsv_fit,
        swap=SwapMode(a.swap),
        fit_table=_fit_table(a, "stacked8gb"),
        lifetime_hours=a.years * HOURS_PER_YEAR,
        scrub_interval_hours=a.scrub_hours,
        seed=a.seed,
    )


def cmd_citadel_simulate(a: argparse.Namespace) -> tuple[Any, dict]:
    from .simkernel import run_campaign

    res = run_campaign(_citadel_cfg(a, a.scheme, a.tsv_fit), a.trials)
    conf = {"scheme": a.scheme, "org": a.org, "tsv_fit": a.tsv_fit, "swap": a.swap,
            "years": a.years, "trials": a.trials}
    return _campaign_dict(res), conf


def cmd_citadel_tsv_sweep(a: argparse.Namespace) -> tuple[Any, dict]:
    from .simkernel import run_campaign

    rows = []
    for fit in _floats(a.fits):
        for scheme in _names(a.schemes):
            r = run_campaign(_citadel_cfg(a, scheme, fit), a.trials)
            rows.append({"scheme": scheme, "tsv_fit": fit, "swap": a.swap, "trials": r.trials,
                         "p_fail": r.p_fail, "ci95": r.ci95, "due_rate": r.due_rate,
                         "sdc_rate": r.sdc_rate, "seed": a.seed})
    return rows, {"fits": a.fits, "schemes": a.schemes, "org": a.org, "swap": a.swap, "trials": a.trials}


def cmd_sudoku_fit(a: argparse.Namespace) -> tuple[Any, dict]:
    from .sudoku import fit_table

    reports = fit_table(_names(a.scheme), _floats(a.scrub_ms), a.delta)
    rows = [
        {"scheme": r.scheme, "scrub_ms": r.scrub_interval_s * 1e3, "ber": r.ber, "p_line_fail": r.p_line_fail,
         "p_cache_fail_per_scrub": r.p_cache_fail_per_scrub, "due_fit": r.due_fit, "sdc_fit": r.sdc_fit,
         "fit": r.fit, "mttf_hours": r.mttf_hours}
        for r in reports
    ]
    return rows, {"schemes": a.scheme, "delta": a.delta, "scrub_ms": a.scrub_ms}


def cmd_sudoku_inject(a: argparse.Namespace) -> tuple[Any, dict]:
    from .faultmodel import sttram_cell_ber
    from .sudoku import sudoku_inject

    ber = a.ber if a.ber is not None else sttram_cell_ber(a.delta, a.scrub_ms / 1e3)
    res = sudoku_inject(a.variant, a.lines, a.group, a.epochs, ber, a.seed)
    conf = {"variant": a.variant, "lines": a.lines, "group": a.group, "epochs": a.epochs, "ber": ber}
    return res.as_dict(), conf


def cmd_report(a: argparse.Namespace) -> tuple[Any, dict]:
    """Merge result files written by other commands into one table."""
    rows: list[dict] = []
    for path in a.inputs:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load {path}: {exc}") from exc
        res = doc.get("result") if isinstance(doc, dict) else None
        if res is None:
            raise ConfigError(f"{path}: no 'result' field")
        for r in res if isinstance(res, list) else [res]:
            rows.append({"source": Path(path).name, **{k: v for k, v in r.items() if not isinstance(v, dict)}})
    if not rows:
        raise ConfigError("no results to report")
    keys: list[str] = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    return [{k: r.get(k) for k in keys} for r in rows], {"inputs": list(a.inputs)}


# Parser --------------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, fmt: str = "json") -> None:
    p.add_argument("--format", choices=("json", "csv"), default=fmt)
    p.add_argument("--out", help="write the report here instead of stdout")


def _lifetime(p: argparse.ArgumentParser, scrub: float) -> None:
    p.add_argument("--years", type=float, default=7.0)
    p.add_argument("--scrub-hours", type=float, default=scrub)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--preset", help="named FIT table")
    g.add_argument("--fit-file", help="FIT table file (INI sections transient/permanent)")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="memshield", description="Memory reliability models and fault-injection campaigns.")
    p.add_argument("--version", action="version", version=f"memshield {__version__}")
    areas = p.add_subparsers(dest="area", required=True, parser_class=_Parser)

    codes = areas.add_parser("codes", help="codec probes").add_subparsers(dest="cmd", required=True)
    c = codes.add_parser("probe", help="detection rate of a codec for an error pattern")
    c.add_argument("--codec", required=True, choices=("hamming7264", "crc8atm"))
    c.add_argument("--errors", type=int, required=True)
    c.add_argument("--mode", choices=("burst", "random"), default="burst")
    c.add_argument("--trials", type=int, default=100_000)
    c.add_argument("--seed", type=int, default=0)
    _common(c)
    c.set_defaults(func=cmd_codes_probe)

    arch = areas.add_parser("archshield", help="scaling-fault provisioning").add_subparsers(dest="cmd", required=True)
    c = arch.add_parser("provision", help="fault map and replication area sizes")
    c.add_argument("--ber", type=float, default=1e-4)
    c.add_argument("--capacity-gb", type=float, default=8.0)
    _common(c)
    c.set_defaults(func=cmd_archshield_provision, seed=None)
    c = arch.add_parser("overflow-curve", help="placement failure vs error count")
    c.add_argument("--groups", type=int, default=2048)
    c.add_argument("--errors", default="60000,90000,120000,150000")
    c.add_argument("--sets", default="8,12,16")
    c.add_argument("--runs", type=int, default=0, help="Monte-Carlo runs per point (0 = analytic only)")
    c.add_argument("--seed", type=int, default=0)
    _common(c, "csv")
    c.set_defaults(func=cmd_archshield_overflow)

    xed = areas.add_parser("xed", help="DIMM-level lifetime campaigns").add_subparsers(dest="cmd", required=True)
    c = xed.add_parser("simulate")
    c.add_argument("--scheme", default="xed", choices=("eccdimm", "xed", "chipkill", "xed-chipkill", "double-chipkill"))
    c.add_argument("--trials", type=int, default=100_000)
    c.add_argument("--seed", type=int, required=True)
    c.add_argument("--scaling-ber", type=float, default=0.0)
    _lifetime(c, 12.0)
    _common(c)
    c.set_defaults(func=cmd_xed_simulate)

    cit = areas.add_parser("citadel", help="stacked-memory campaigns").add_subparsers(dest="cmd", required=True)
    for name, func in (("simulate", cmd_citadel_simulate), ("tsv-sweep", cmd_citadel_tsv_sweep)):
        c = cit.add_parser(name)
        if name == "simulate":
            c.add_argument("--scheme", default="3dp-dds",
                           choices=("same-bank", "stripe", "raid5", "6ec7ed", "3dp", "3dp-dds"))
            c.add_argument("--tsv-fit", type=float, default=0.0)
        else:
            c.add_argument("--schemes", default="stripe,3dp,3dp-dds")
            c.add_argument("--fits", default="0,14.3,143,1430,14300")
        c.add_argument("--org", default="hbm")
        c.add_argument("--swap", default="assoc", choices=("none", "set", "assoc"))
        c.add_argument("--trials", type=int, default=100_000)
        c.add_argument("--seed", type=int, required=True)
        _lifetime(c, 12.0)
        _common(c, "json" if name == "simulate" else "csv")
        c.set_defaults(func=func)

    sud = areas.add_parser("sudoku", help="transient-fault cache protection").add_subparsers(dest="cmd", required=True)
    c = sud.add_parser("fit", help="analytic FIT table")
    c.add_argument("--scheme", default="ecc1,ecc2,ecc3,ecc4,ecc5,x,y,z")
    c.add_argument("--delta", type=float, default=30.0)
    c.add_argument("--scrub-ms", default="20")
    _common(c, "csv")
    c.set_defaults(func=cmd_sudoku_fit, seed=None)
    c = sud.add_parser("inject", help="direct Monte-Carlo on a small cache")
    c.add_argument("--variant", choices=("x", "y", "z"), default="z")
    c.add_argument("--lines", type=int, default=4096)
    c.add_argument("--group", type=int, default=64)
    c.add_argument("--epochs", type=int, default=100)
    c.add_argument("--ber", type=float, default=None, help="per-scrub bit error rate (default: from --delta)")
    c.add_argument("--delta", type=float, default=30.0)
    c.add_argument("--scrub-ms", type=float, default=20.0)
    c.add_argument("--seed", type=int, required=True)
    _common(c)
    c.set_defaults(func=cmd_sudoku_inject)

    c = areas.add_parser("report", help="merge JSON result files into one table")
    c.add_argument("inputs", nargs="+")
    _common(c, "csv")
    c.set_defaults(func=cmd_report, seed=None, cmd=None)
    return p


def _positive(a: argparse.Namespace) -> None:
    for key in ("trials", "epochs", "lines", "group", "groups"):
        v = getattr(a, key, None)
        if v is not None and v < 1:
            raise ConfigError(f"--{key} must be >= 1")


def main(argv: Sequence[str] | None = None, stdout=None) -> int:
    out = stdout or sys.stdout
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        _positive(args)
        func: Callable = args.func
        result, conf = func(args)
        manifest = RunManifest(["memshield", *argv], conf, getattr(args, "seed", None))
        text = emit_report(result, manifest, args.format, args.out)
        if not args.out:
            out.write(text)
        return EXIT_OK
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (ConfigError, ValueError) as exc:
        print(f"memshield: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AssertionError, ArithmeticError, RuntimeError) as exc:
        print(f"memshield: internal invariant violated: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
