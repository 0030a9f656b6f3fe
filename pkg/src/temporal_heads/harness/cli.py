"""Command line for generating data, training, checking and ablating temporal heads.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

from ..data import Dataset, SynthSpec, generate_synthetic
from ..errors import ConfigError, TemporalHeadsError
from .baseline import FrameBaselineConfig
from ..models import FAMILIES, Head, config_to_dict, shrink
from ..train import TrainConfig, accuracy, fit
from .ablation import report, run_ablation
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, catalog, load_run_config, run_config_from_dict
from .gradcheck import format_rows, run_gradchecks

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="temporal-heads", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=False, out=False):
        p.add_argument("--config", type=Path, help="JSON config file")
        p.add_argument("--seed", type=_u64, help="override the seed")
        p.add_argument("--small", action="store_true", help="shrink hidden widths for quick runs")
        if dataset:
            p.add_argument("--dataset", type=Path, required=True, help="dataset manifest (JSON)")
        if out:
            p.add_argument("--out", type=Path, help="directory for result artifacts")

    p = sub.add_parser("synth", help="write a synthetic order-swap dataset")
    p.add_argument("--config", type=Path, help="JSON file with SynthSpec fields")
    p.add_argument("--seed", type=_u64)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="fit one head")
    common(p, dataset=True, out=True)
    p.add_argument("--family", choices=("tslstm", "tconv"), help="family defaults when no --config is given")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")

    p = sub.add_parser("gradcheck", help="finite-difference check of catalog variants")
    p.add_argument("--all", action="store_true", help="every variant of the selected families")
    p.add_argument("--variants", help="comma-separated variant ids")
    p.add_argument("--family", choices=("tslstm", "tconv"))
    p.add_argument("--small", action="store_true")
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--max-entries", type=_positive, default=16, help="probed entries per parameter tensor")

    p = sub.add_parser("ablate", help="train a catalog subset and print the ranked table")
    common(p, dataset=True, out=True)
    p.add_argument("--family", choices=("tslstm", "tconv"), required=True)
    p.add_argument("--variants", help="comma-separated variant ids (default: the whole catalog)")
    p.add_argument("--epochs", type=_positive, help="override max_epochs")
    p.add_argument("--jobs", type=_positive, default=1)

    p = sub.add_parser("baseline", help="frame-averaging control classifier")
    common(p, dataset=True, out=True)
    return parser


def _print_resolved(doc: dict) -> None:
    print("resolved config:")
    print(json.dumps(doc, indent=2, sort_keys=True))
    sys.stdout.flush()


def _write(out: Path | None, name: str, text: str) -> None:
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text + "\n")


def _train_config(args, family: str) -> TrainConfig:
    """Train settings from ``--config``: a run config's ``train`` block or bare train fields."""
    if args.config is None:
        cfg = TrainConfig.for_family(family)
    elif "family" in _read_json(args.config):
        cfg = load_run_config(args.config).train
    else:
        cfg = TrainConfig.from_dict(_read_json(args.config), family)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "epochs", None) is not None:
        cfg = replace(cfg, max_epochs=args.epochs)
    return cfg


def _read_json(path: Path) -> dict:
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return doc


# -- subcommands -------------------------------------------------------------------
def cmd_synth(args) -> int:
    doc = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        spec = SynthSpec(**{k: (tuple(map(tuple, v)) if k == "prototypes_per_class" and v else v)
                            for k, v in doc.items()})
    except TypeError as exc:
        raise ConfigError(f"bad synthetic spec: {exc}") from None
    _print_resolved({"synth": asdict(spec), "out": str(args.out)})
    manifest = generate_synthetic(spec, args.out)
    print(f"wrote {len(manifest.entries)} sequences to {args.out / 'manifest.json'}")
    return EXIT_OK


def _run_config(args, doc: dict | None, dataset: Dataset) -> RunConfig:
    if doc is not None:
        try:
            run = run_config_from_dict(doc, dataset.num_classes)
        except ConfigError as exc:
            raise ConfigError(f"{args.config}: {exc}") from None
    else:
        family = args.family or "tslstm"
        model = FAMILIES[family](num_classes=dataset.num_classes)
        run = RunConfig(family, model, TrainConfig.for_family(family))
    model = shrink(run.model) if args.small else run.model
    train = run.train if args.seed is None else replace(run.train, seed=args.seed)
    return replace(run, model=model, train=train)


def _fit_and_save(run: RunConfig, dataset: Dataset, out: Path | None) -> int:
    def log(e):
        print(f"epoch {e.epoch:>3}  loss {e.loss:.6f}  train {e.train_accuracy:.4f}  "
              f"eval {e.eval_accuracy:.4f}  lr {e.lr:.2e}", flush=True)

    rep = fit(run.model, dataset, run.train, log=log)
    print(rep.to_table())
    _write(out, "report.json", rep.to_json())
    _write(out, "report.txt", rep.to_table())
    if out is not None:
        save_checkpoint(out / "checkpoint.npz", run.model, rep.params, rep.stats)
        _write(out, "config.json", json.dumps(run.resolved(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    doc = _read_json(args.config) if args.config is not None else None
    dataset = Dataset.load(args.dataset)
    run = _run_config(args, doc, dataset)
    _print_resolved({**run.resolved(), "dataset": str(args.dataset)})
    return _fit_and_save(run, dataset, args.out)


def cmd_baseline(args) -> int:
    train = _train_config(args, "baseline")
    dataset = Dataset.load(args.dataset)
    run = RunConfig("baseline", FrameBaselineConfig(num_classes=dataset.num_classes), train)
    _print_resolved({**run.resolved(), "dataset": str(args.dataset)})
    return _fit_and_save(run, dataset, args.out)


def cmd_eval(args) -> int:
    cfg, params, stats = load_checkpoint(args.checkpoint)
    dataset = Dataset.load(args.dataset)
    _print_resolved({"checkpoint": str(args.checkpoint), "dataset": str(args.dataset),
                     "split": args.split, "model": config_to_dict(cfg)})
    x, y = (dataset.x_test, dataset.y_test) if args.split == "test" else (dataset.x_train, dataset.y_train)
    probs = Head(cfg).predict_proba(x, params, stats)
    print(f"{args.split} accuracy {accuracy(probs, y):.4f} on {len(y)} sequences")
    return EXIT_OK


def _variant_list(text: str | None):
    return None if text is None else [v.strip() for v in text.split(",") if v.strip()]


def cmd_gradcheck(args) -> int:
    variants = _variant_list(args.variants)
    if not args.all and variants is None:
        raise ConfigError("gradcheck needs --all or --variants")
    families = (args.family,) if args.family else ("tslstm", "tconv")
    if variants is not None:
        known = {e.id for f in families for e in catalog(f)}
        missing = [v for v in variants if v not in known]
        if missing:
            raise ConfigError(f"unknown variants: {', '.join(missing)}")
    _print_resolved({"families": list(families), "variants": variants or "all", "small": args.small,
                     "seed": args.seed, "max_entries": args.max_entries})
    rows = run_gradchecks(families, variants, small=args.small, seed=args.seed,
                          max_entries=args.max_entries)
    print(format_rows(rows))
    failed = [r for r in rows if not r.passed]
    worst = max(rows, key=lambda r: r.max_error)
    print(f"{len(rows)} variants, worst {worst.max_error:.3e} ({worst.variant_id}: {worst.worst_parameter}), "
          f"{len(failed)} failed")
    return EXIT_OK if not failed else EXIT_RUNTIME


def cmd_ablate(args) -> int:
    train = _train_config(args, args.family)
    dataset = Dataset.load(args.dataset)
    entries = catalog(args.family)
    variants = _variant_list(args.variants)
    if variants is not None:
        known = {e.id for e in entries}
        missing = [v for v in variants if v not in known]
        if missing:
            raise ConfigError(f"unknown {args.family} variants: {', '.join(missing)}")
        entries = [e for e in entries if e.id in variants]
    _print_resolved({"family": args.family, "dataset": str(args.dataset), "small": args.small,
                     "jobs": args.jobs, "train": train.to_dict(), "variants": [e.id for e in entries]})
    results = run_ablation(args.family, entries, dataset, train, jobs=args.jobs, small=args.small)
    rep = report(results)
    print(rep.text)
    _write(args.out, "ablation.txt", rep.text)
    _write(args.out, "ablation.json", rep.json)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
    "baseline": cmd_baseline,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"temporal-heads: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TemporalHeadsError, OSError) as exc:
        print(f"temporal-heads: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
