"""``flowbench`` command line: generate, fit-apply, evaluate, inspect.

Failures print one line ``error: <ErrorClass>: <detail>`` on stderr and
exit with status 1.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import harness
from .dataio import read_header
from .errors import ConfigError, FlowbenchError
from .synthetic import KINDS


def _load_json(path):
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _parse_params(pairs):
    out = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--param expects key=value, got {item!r}")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("FLOWBENCH_THREADS")
    return int(env) if env else 1


def cmd_generate(args) -> None:
    doc = {}
    if args.preset:
        if args.preset not in harness.PRESETS:
            raise ConfigError(f"unknown preset {args.preset!r}; available: {', '.join(harness.PRESETS)}")
        doc.update(harness.PRESETS[args.preset]["generator"])
    doc.update(_load_json(args.config))
    if args.kind:
        doc["kind"] = args.kind
    if args.seed is not None:
        doc["seed"] = args.seed
    doc.update(_parse_params(args.param))
    if doc.get("kind") not in KINDS:
        raise ConfigError(f"unknown generator kind {doc.get('kind')!r}; valid kinds: {', '.join(KINDS)}")
    harness.generate(doc, args.out)
    print(args.out)


def cmd_fit_apply(args) -> None:
    overrides = {
        "method": args.method,
        "N": args.N,
        "r": args.r,
        "history": args.history,
        "horizon": args.horizon,
        "noise_level": args.noise_level,
        "block": args.block,
        "overlap": args.overlap,
        "sine_order": args.sine_order,
        "amplitudes": args.amplitudes,
        "subtract_mean": args.subtract_mean,
    }
    overrides.update(_parse_params(args.param))
    cfg = harness.expand_config(args.preset, _load_json(args.config), overrides)
    cfg.pop("generator", None)
    arrays, meta = harness.read_dataset(args.dataset)
    if meta.get("challenge_tag") != cfg["challenge"]:
        raise ConfigError(
            f"method {cfg['method']!r} solves {cfg['challenge']!r} but the dataset is {meta.get('challenge_tag')!r}"
        )
    results = harness.fit_apply(arrays, cfg, _threads(args))
    results.write(args.out)
    print(args.out)


def cmd_evaluate(args) -> None:
    report = harness.evaluate_files(args.results, args.truth, args.out, args.csv)
    for name, value in report.metrics.items():
        if getattr(value, "ndim", 0) == 0:
            print(f"{name} = {float(value):.6g}")


def cmd_inspect(args) -> None:
    header = read_header(args.path)
    print(json.dumps(header, indent=2, sort_keys=True))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flowbench", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: $FLOWBENCH_THREADS or 1)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset container")
    g.add_argument("--kind", help=f"one of: {', '.join(KINDS)}")
    g.add_argument("--seed", type=int)
    g.add_argument("--preset", help="use a preset's desk-scale generator")
    g.add_argument("--config", help="JSON generator document")
    g.add_argument("--param", action="append", metavar="KEY=JSON", help="override a generator parameter")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit-apply", help="run a method and write a results file")
    f.add_argument("--dataset", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--preset", choices=sorted(harness.PRESETS))
    f.add_argument("--config", help="JSON run configuration")
    f.add_argument("--method", choices=sorted(harness.METHODS))
    f.add_argument("--N", type=int)
    f.add_argument("--r", type=int)
    f.add_argument("--history", "-L", type=int)
    f.add_argument("--horizon", type=int)
    f.add_argument("--noise-level", type=float)
    f.add_argument("--block", type=int)
    f.add_argument("--overlap", type=float)
    f.add_argument("--sine-order", type=int)
    f.add_argument("--amplitudes", choices=["last", "first", "window"])
    f.add_argument("--subtract-mean", action=argparse.BooleanOptionalAction, default=None)
    f.add_argument("--param", action="append", metavar="KEY=JSON")
    f.set_defaults(func=cmd_fit_apply)

    e = sub.add_parser("evaluate", help="score a results file against the truth")
    e.add_argument("--results", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--csv", help="CSV path (default: metrics path with .csv)")
    e.set_defaults(func=cmd_evaluate)

    i = sub.add_parser("inspect", help="print a container header")
    i.add_argument("path")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("error: ConfigError: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        args.func(args)
    except (FlowbenchError, ValueError, OSError, KeyError) as exc:
        detail = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {detail}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
