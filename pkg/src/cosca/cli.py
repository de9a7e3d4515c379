"""Command-line entry point: ``cosca {run,ablation,gen-data,gradcheck,export-embeddings}``.

Exit codes: 0 success, 1 gradient check failure, 2 configuration error,
3 training diverged (non-finite loss), 4 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import kernels
from .config import ConfigError, load
from .data import DataFormatError
from .trainer import VARIANTS, NonFiniteLossError

log = logging.getLogger("cosca")

EXIT_GRADCHECK = 1
EXIT_CONFIG = 2
EXIT_NAN = 3
EXIT_IO = 4


def _split(values) -> list[str]:
    return [v for item in values for v in item.split(",") if v]


def cmd_run(args) -> int:
    from .experiment import run_experiment

    cfg = load(args.config)
    summary = run_experiment(cfg, args.out)
    acc = summary["accuracy"]
    print(f"{summary['variant']}: target_acc={acc['target_acc']} source_acc={acc['source_acc']}")
    return 0


def cmd_ablation(args) -> int:
    from .experiment import run_ablation

    cfg = load(args.config)
    variants = _split(args.variants)
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise ConfigError(f"unknown variant(s) {bad}; expected {list(VARIANTS)}")
    seeds = [int(s) for s in _split(args.seeds)]
    report = run_ablation(cfg, variants, seeds, args.out, args.jobs)
    for row in report.summary():
        print(f"{row['variant']:>12}  median={row['median']}  iqr=[{row['q1']}, {row['q3']}]  ok={row['n_ok']}")
    return 0


def cmd_gen_data(args) -> int:
    from .experiment import load_datasets, write_dataset_dir

    cfg = load(args.config)
    source, target, truth = load_datasets(cfg)
    write_dataset_dir(source, target, truth, args.out)
    print(f"wrote {len(source)} source and {len(target)} target rows to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import TOLERANCE, run_gradcheck

    report = run_gradcheck(instances=args.instances, seed=args.seed)
    failed = [name for name, err in report.items() if not err <= TOLERANCE]
    for name, err in report.items():
        status = "FAIL" if name in failed else "ok"
        print(f"{name:>18}  worst_rel_err={err:.3e}  {status}")
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_GRADCHECK
    return 0


def cmd_export(args) -> int:
    from .experiment import export_from_checkpoint

    export_from_checkpoint(args.checkpoint, args.data, args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cosca", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train one configuration")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (default: [output] directory)")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("ablation", help="train a variants x seeds grid")
    a.add_argument("config")
    a.add_argument("--variants", nargs="+", default=list(VARIANTS))
    a.add_argument("--seeds", nargs="+", default=["0", "1", "2", "3", "4"])
    a.add_argument("--out")
    a.add_argument("--jobs", type=int, default=1)
    a.set_defaults(func=cmd_ablation)

    g = sub.add_parser("gen-data", help="write the configured dataset as CSV files")
    g.add_argument("config", help="config file; only its [dataset] section is used")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    c = sub.add_parser("gradcheck", help="finite-difference check of every loss")
    c.add_argument("--instances", type=int, default=20)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)

    e = sub.add_parser("export-embeddings", help="features + PCA for a trained checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("data", help="directory written by gen-data")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    log.debug("pair kernel backend: %s", kernels.BACKEND)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteLossError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_NAN
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
