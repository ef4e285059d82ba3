"""Command-line interface.

Subcommands: ``fixture``, ``train``, ``infer``, ``eval``, ``ablate`` and
``gradcheck``. Numeric results are written as tab-separated and JSON files;
the report paths also render PNG figures unless ``--no-plots`` is given.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Optional, Sequence

from threadpoolctl import threadpool_limits

from .datamodel import DataError, Dataset, generate_fixture, load_dataset
from .eval import (
    APReport,
    evaluate,
    format_table,
    partition_report,
    read_predictions,
    write_predictions,
)
from .head import ABLATIONS, HeadConfig, ModelConfig, infer
from .numcore.tensor import NumericError
from .train import TrainConfig, load_checkpoint, save_checkpoint, train_loop

log = logging.getLogger("vsgnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# desk-scale defaults; ``channels`` always follows the feature maps
DEFAULT_CONFIG = {
    "model": {"proj_dim": 512, "spatial_channels": [64, 32]},
    "head": {},
    "train": {"lr": 0.01, "batch_size": 8, "momentum": 0.9, "weight_decay": 0.0001, "epochs": 200},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- config ------------------------------------------------------------------


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def resolve_config(args, dataset: Optional[Dataset] = None) -> dict:
    """Defaults < ``--config`` file < command-line flags."""
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict) or set(raw) - {"model", "head", "train"}:
            raise UsageError(f"{path}: expected an object with keys among model, head, train")
        cfg = _merge(cfg, raw)
    if getattr(args, "ablation", None):
        cfg["head"]["ablation"] = args.ablation
    if getattr(args, "seed", None) is not None:
        cfg["train"]["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        cfg["train"]["epochs"] = args.epochs
    if dataset is not None:
        cfg["model"]["num_actions"] = dataset.num_actions
        cfg["model"]["channels"] = int(dataset.records[0].feature.shape[0])
    return cfg


def _build_configs(cfg: dict):
    try:
        return (
            ModelConfig.from_dict(cfg["model"]),
            HeadConfig.from_dict(cfg["head"]),
            TrainConfig.from_dict(cfg["train"]),
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


# -- helpers ---------------------------------------------------------------------


def _existing(path: Optional[str], what: str) -> Path:
    if path is None:
        raise UsageError(f"--{what} is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _load(args) -> Dataset:
    ds = load_dataset(_existing(args.manifest, "manifest"))
    if not ds.records:
        raise DataError(f"{args.manifest}: dataset has no images")
    return ds


def _select(ds: Dataset, split: Optional[str]) -> Dataset:
    if split in (None, "all"):
        return ds
    sub = ds.split(split)
    if not sub.records:
        raise DataError(f"split {split!r} has no images")
    return sub


@contextmanager
def _outputs():
    """Collects created files; removes them all if the command fails."""
    created: list[Path] = []
    try:
        yield created
    except BaseException:
        for p in reversed(created):
            if p.is_file():
                p.unlink()
        raise


def _write_text(created: list, path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    created.append(path)
    path.write_text(text)
    return path


def _report_tsv(reports: dict[str, APReport]) -> str:
    actions = sorted({a for r in reports.values() for a in r.ap})
    lines = ["\t".join(["config"] + [f"ap_{a}" for a in actions] + ["mAP", "full", "rare", "non_rare"])]
    for label, r in reports.items():
        cells = [label] + [repr(r.ap[a]) if a in r.ap else "" for a in actions] + [repr(r.mean_ap)]
        cells += [repr(r.partitions[k]) if k in r.partitions else "" for k in ("full", "rare", "non_rare")]
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


# -- commands ------------------------------------------------------------------------


def cmd_fixture(args) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        raise UsageError(f"output directory {out} is not empty")
    if not 0.0 <= args.holdout < 1.0:
        raise UsageError("--holdout must be in [0, 1)")
    if min(args.images, args.humans, args.actions) < 1 or args.objects < 0:
        raise UsageError("--images, --humans and --actions must be >= 1")
    try:
        manifest = generate_fixture(
            args.seed, args.images, args.humans, args.objects, args.actions,
            tuple(args.feature_dims), out, args.holdout,
        )
    except BaseException:
        if out.exists():
            for p in sorted(out.rglob("*"), reverse=True):
                p.unlink() if p.is_file() else p.rmdir()
        raise
    print(manifest)
    return EXIT_OK


def cmd_train(args) -> int:
    if args.config:
        _existing(args.config, "config")
    ds = _load(args)
    cfg = resolve_config(args, ds)
    model_cfg, head_cfg, train_cfg = _build_configs(cfg)
    data = _select(ds, args.split)
    out = Path(args.out)
    with _outputs() as created:
        result = train_loop(data, model_cfg, head_cfg, train_cfg)
        ckpt = out / "checkpoint.vsgc"
        ckpt.parent.mkdir(parents=True, exist_ok=True)
        created.append(ckpt)
        save_checkpoint(ckpt, result.params, model_cfg, head_cfg, train_cfg, epoch=result.epochs)
        rows = "".join(f"{e}\t{v!r}\n" for e, v in enumerate(result.losses))
        _write_text(created, out / "losses.tsv", "epoch\tloss\n" + rows)
        if not args.no_plots and result.losses:
            from .report import loss_curve

            created.append(out / "loss.png")
            loss_curve(result.losses, out / "loss.png", f"training loss ({head_cfg.ablation})")
    print(ckpt)
    return EXIT_OK


def cmd_infer(args) -> int:
    ckpt = _existing(args.checkpoint, "checkpoint")
    ds = _load(args)
    try:
        params, model_cfg, head_cfg, _ = load_checkpoint(ckpt)
    except (ValueError, KeyError) as exc:
        raise DataError(f"{ckpt}: unreadable checkpoint ({exc})") from None
    if model_cfg.num_actions != ds.num_actions:
        raise DataError(f"checkpoint predicts {model_cfg.num_actions} actions, dataset has {ds.num_actions}")
    data = _select(ds, args.split)
    out = Path(args.out)
    with _outputs() as created:
        preds = infer(data, params, model_cfg, head_cfg)
        out.parent.mkdir(parents=True, exist_ok=True)
        created.append(out)
        write_predictions(preds, out)
    print(out)
    return EXIT_OK


def _evaluate_all(preds, data: Dataset, train_counts, scenario: int) -> APReport:
    report = evaluate(preds, data.triplets, data.num_actions, scenario)
    return partition_report(report, train_counts)


def cmd_eval(args) -> int:
    pred_path = _existing(args.predictions, "predictions")
    ds = _load(args)
    preds = read_predictions(pred_path)
    data = _select(ds, args.split)
    counts = ds.split("train").action_counts() if ds.split("train").records else ds.action_counts()
    report = _evaluate_all(preds, data, counts, args.scenario)
    out = Path(args.out)
    with _outputs() as created:
        _write_text(created, out / "report.json", json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n")
        _write_text(created, out / "report.tsv", _report_tsv({f"scenario{args.scenario}": report}))
        if not args.no_plots:
            from .report import pr_curves

            created.append(out / "pr.png")
            pr_curves(preds, data.triplets, report, out / "pr.png")
    print(format_table({f"scenario{args.scenario}": report}))
    return EXIT_OK


def cmd_ablate(args) -> int:
    if args.config:
        _existing(args.config, "config")
    ds = _load(args)
    cfg = resolve_config(args, ds)
    _build_configs(cfg)
    train = ds.split("train")
    test = ds.split("test")
    if not train.records:
        raise DataError("ablation needs images tagged 'train'")
    if not test.records:
        log.warning("no 'test' images; evaluating on the training split")
        test = train
    reports: dict[str, APReport] = {}
    for ablation in ABLATIONS:
        cfg["head"]["ablation"] = ablation
        model_cfg, head_cfg, train_cfg = _build_configs(cfg)
        log.info("training %s", ablation)
        result = train_loop(train, model_cfg, head_cfg, train_cfg)
        preds = infer(test, result.params, model_cfg, head_cfg)
        reports[ablation] = _evaluate_all(preds, test, train.action_counts(), args.scenario)
    out = Path(args.out)
    with _outputs() as created:
        _write_text(created, out / "ablation.tsv", _report_tsv(reports))
        payload = {"config": cfg, "reports": {k: r.to_dict() for k, r in reports.items()}}
        _write_text(created, out / "ablation.json", json.dumps(payload, sort_keys=True, indent=1) + "\n")
        if not args.no_plots:
            from .report import ablation_bars

            created.append(out / "ablation.png")
            ablation_bars(reports, out / "ablation.png")
    print(format_table(reports))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .selfcheck import TOLERANCE, run

    report = run(args.seed)
    for name, err in report.items():
        print(f"{name}\t{err:.3e}\t{'ok' if err < TOLERANCE else 'FAIL'}")
    worst = max(report.values())
    print(f"max\t{worst:.3e}")
    return EXIT_OK if worst < TOLERANCE else EXIT_NUMERIC


# -- parser ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--threads", type=int, default=None, help="BLAS threads (default: all cores)")
    shared.add_argument("-v", "--verbose", action="store_true")
    parser = _Parser(prog="vsgnet", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help):
        return sub.add_parser(name, help=help, parents=[shared])

    def common(p, manifest=True, out_help="output directory"):
        if manifest:
            p.add_argument("--manifest", required=True, help="dataset manifest.json")
        p.add_argument("--out", required=True, help=out_help)

    p = command("fixture", help="write a synthetic planted-rule dataset")
    common(p, manifest=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--images", type=int, default=16)
    p.add_argument("--humans", type=int, default=2)
    p.add_argument("--objects", type=int, default=2)
    p.add_argument("--actions", type=int, default=6)
    p.add_argument("--feature-dims", type=int, nargs=3, default=(32, 16, 16), metavar=("C", "H", "W"))
    p.add_argument("--holdout", type=float, default=0.0, help="fraction of images tagged 'test'")
    p.set_defaults(func=cmd_fixture)

    p = command("train", help="train one configuration and write a checkpoint")
    common(p)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--ablation", choices=ABLATIONS)
    p.add_argument("--split", default="train", help="split to train on ('all' for every image)")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_train)

    p = command("infer", help="score every candidate pair with a checkpoint")
    common(p, out_help="prediction dump (.jsonl)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="all")
    p.set_defaults(func=cmd_infer)

    p = command("eval", help="average precision of a prediction dump")
    common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--scenario", type=int, choices=(1, 2), default=1)
    p.add_argument("--split", default="all")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = command("ablate", help="train and evaluate all four configurations")
    common(p)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--scenario", type=int, choices=(1, 2), default=1)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = command("gradcheck", help="64-bit finite-difference check of every layer and configuration")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be >= 1")
    threads = args.threads or os.cpu_count() or 1
    try:
        with threadpool_limits(limits=threads):
            return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # remaining validation failures come from the data being processed
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
