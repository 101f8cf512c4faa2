"""Command-line interface: ``popadj run | simulate | diagnose``.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .analysis import ComparisonResult, RunConfig, run_analysis
from .errors import NumericalError, ValidationError
from .report import FORMATS, diagnose, emit_report
from .simulate import TrialDGP, simulate_trial_pair, write_trial_pair
from .strategies import STRATEGIES

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def _option(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"--opt expects key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="popadj", description="Anchored population-adjusted indirect comparisons.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one analysis from flags or a JSON config")
    r.add_argument("--config", type=Path, help="JSON file of flat key/value settings")
    r.add_argument("--ipd", help="IPD CSV/JSON path")
    r.add_argument("--ald", help="ALD CSV/JSON path")
    r.add_argument("--strategy", choices=sorted(STRATEGIES))
    r.add_argument("--formula", help='e.g. "y ~ PF1 + trt + trt:EM1"')
    r.add_argument("--family", choices=["binomial", "gaussian", "poisson"])
    r.add_argument("--link")
    r.add_argument("--trt-var")
    r.add_argument("--scale")
    r.add_argument("--ref-trt")
    r.add_argument("--ipd-comp")
    r.add_argument("--ald-comp")
    r.add_argument("--ci", type=float)
    r.add_argument("--var-method", choices=["sample", "sandwich", "rubin"])
    r.add_argument("--seed", type=int)
    r.add_argument("--workers", type=int, help="bootstrap worker threads")
    r.add_argument("--opt", action="append", type=_option, default=[], metavar="KEY=VALUE",
                   help="strategy option (JSON-decoded value), repeatable")
    r.add_argument("--format", choices=FORMATS, default="text")
    r.add_argument("--out", type=Path)

    s = sub.add_parser("simulate", help="simulate an IPD/ALD trial pair from a DGP JSON file")
    s.add_argument("--dgp", type=Path, required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", type=Path, required=True, help="output directory")

    d = sub.add_parser("diagnose", help="diagnostics from a result JSON file")
    d.add_argument("result", type=Path)
    d.add_argument("--kind", default="auto", choices=["auto", "weights", "trace", "rubin"])
    d.add_argument("--out", type=Path)
    return p


_FLAG_KEYS = {"ipd": "ipd", "ald": "ald", "strategy": "strategy", "formula": "formula", "family": "family",
              "link": "link", "trt_var": "trt_var", "scale": "scale", "ref_trt": "ref_trt", "ipd_comp": "ipd_comp",
              "ald_comp": "ald_comp", "ci": "ci", "var_method": "var_method", "seed": "seed", "workers": "n_jobs"}


def _config_from_args(args) -> RunConfig:
    settings, base = {}, None
    if args.config is not None:
        try:
            settings = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(settings, dict):
            raise ValidationError("config must be a JSON object")
        base = args.config.parent
    for attr, key in _FLAG_KEYS.items():
        v = getattr(args, attr)
        if v is not None:
            settings[key] = v
    options = dict(settings.pop("options", {}))
    options.update(dict(args.opt))
    settings["options"] = options
    return RunConfig.from_mapping(settings, base=base)


def _write(text: str, out: Path | None):
    if out is None:
        sys.stdout.write(text)
    else:
        try:
            out.write_text(text, encoding="utf-8")
        except OSError as exc:
            raise ValidationError(f"cannot write {out}: {exc}") from None


def _run(args) -> int:
    result = run_analysis(_config_from_args(args))
    text = emit_report(result, args.format)
    _write(text, args.out)
    return EXIT_OK


def _simulate(args) -> int:
    try:
        dgp = TrialDGP.from_dict(json.loads(args.dgp.read_text()))
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise ValidationError(f"invalid DGP file {args.dgp}: {exc}") from None
    paths = write_trial_pair(simulate_trial_pair(dgp, seed=args.seed), args.out)
    sys.stdout.write("".join(f"{k}: {v}\n" for k, v in paths.items()))
    return EXIT_OK


def _diagnose(args) -> int:
    try:
        result = ComparisonResult.from_json(args.result.read_text())
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ValidationError(f"cannot read result {args.result}: {exc}") from None
    _write(json.dumps(diagnose(result, args.kind), sort_keys=True, indent=2) + "\n", args.out)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _run, "simulate": _simulate, "diagnose": _diagnose}[args.command]
    try:
        return handler(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
