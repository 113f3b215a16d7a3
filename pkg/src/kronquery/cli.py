"""Command line entry point: ``kronquery run CONFIG`` or ``kronquery <experiment> [flags]``.

Exit status is 0 on success, 2 for configuration errors and 3 for failures
while an experiment runs.
"""

from __future__ import annotations

import argparse
import sys

from .sampling import ConfigurationError
from .experiments import ALIASES, EXPERIMENTS, ConfigError, load_config, run_experiment, validate_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

# flag name -> (type, help); every flag lands in ``params``
PARAM_FLAGS = {
    "zero-test": {"alphabet": (str, "query alphabet, e.g. pm1 or '1,-1,i'"),
                  "dist": (str, "query law"), "m": (int, "queries per trial"),
                  "instance": (str, "adversary or gaussian-rank-one"),
                  "operand": (str, "tensor or matrix")},
    "trace": {"alphabet": (str, "adversary alphabet"), "dist": (str, "query law"),
              "t": (int, "queries per estimate"), "tolerance": (float, "relative tolerance")},
    "l2": {"dist": (str, "query law"), "t": (int, "queries per estimate"),
           "tolerance": (float, "relative tolerance")},
    "distinguish": {"family": (str, "spiked or planted"), "lam": (float, "spike strength"),
                    "eps": (float, "planted mixing weight"), "policy": (str, "threshold, blind or power"),
                    "dist": (str, "query law"), "t": (int, "query budget"),
                    "threshold": (float, "decision threshold"), "iterations": (int, "power iterations")},
    "game-values": {"alphabet": (str, "alphabet")},
    "concentration": {"tau_scale": (float, "c in tau = c^-q")},
    "divergence": {"dim": (int, "dimension"), "a": (str, "comma separated mean a"), "b": (str, "comma separated mean b")},
    "projection": {"t": (int, "queries"), "c1": (float, "threshold constant")},
}


def _q_spec(text: str):
    for sep in ("..", ":", "-"):
        if sep in text:
            lo, hi = text.split(sep, 1)
            return {"q_range": [int(lo), int(hi)]}
    return {"q": int(text)}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kronquery", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("config")
    _common(run, config_mode=True)

    for name in list(EXPERIMENTS) + list(ALIASES):
        target = ALIASES.get(name, name)
        p = sub.add_parser(name, help=f"{target} experiment")
        p.add_argument("--n", type=int)
        p.add_argument("--q", type=_q_spec, help="order, or a range like 2..10")
        _common(p)
        for flag, (typ, hlp) in PARAM_FLAGS[target].items():
            p.add_argument(f"--{flag.replace('_', '-')}", dest=f"param_{flag}", type=typ, help=hlp)
    return ap


def _common(p, config_mode=False):
    p.add_argument("--seed", type=int, required=False)
    p.add_argument("--trials", type=int)
    p.add_argument("--out", help="CSV path (default stdout)")
    p.add_argument("--threads", type=int)
    p.add_argument("--no-timestamp", action="store_true", help="omit the generation time line")


def _raw_from_args(args) -> dict:
    raw = {"experiment": args.command}
    if args.seed is not None:
        raw["seed"] = args.seed
    for key in ("n", "trials", "threads"):
        val = getattr(args, key, None)
        if val is not None:
            raw[key] = val
    if getattr(args, "q", None):
        raw.update(args.q)
    params = {k[len("param_"):]: v for k, v in vars(args).items() if k.startswith("param_") and v is not None}
    if params:
        raw["params"] = params
    return raw


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            overrides = {k: getattr(args, k) for k in ("seed", "trials", "threads", "out")
                         if getattr(args, k) is not None}
            if overrides:
                cfg = validate_config({**cfg.raw, **overrides})
        else:
            cfg = validate_config(_raw_from_args(args))
        if args.no_timestamp:
            cfg.timestamp = False
        out = args.out or cfg.out
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        text = run_experiment(cfg)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
