"""Command-line entry point: gen / train / eval / probe / report.

Exit codes: 0 success, 1 internal abort (divergence, failed invariant),
2 usage or data-format error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .model import ModelConfig, SCLModel, load_model, save_model
from .probes import (mean_composition_loss, probe_report,
                     relation_embedding_rows, track_coevolution,
                     write_embedding_csv)
from .rpm.dataset import DatasetFormatError, read_dataset, write_dataset
from .rpm.generate import derive_seed, generate_problem
from .rpm.rules import ConstraintError, HeldoutFilter
from .rpm.types import Attribute, Layout, RELATION_KINDS
from .training import TrainConfig, evaluate, split_dataset, train_runs

LAYOUT_TAGS = ("center", "lr", "ud", "oic", "joint")
_JOINT_ORDER = (Layout.CENTER, Layout.LEFT_RIGHT, Layout.UP_DOWN,
                Layout.OUT_IN_CENTER)


class UsageError(ValueError):
    pass


def _parse_pair(text: str) -> tuple[Attribute, str]:
    attr_name, sep, kind = text.partition(":")
    if not sep:
        raise UsageError(f"heldout pair must be attribute:relation, got {text!r}")
    try:
        attr = Attribute.from_label(attr_name)
    except KeyError:
        raise UsageError(f"unknown attribute {attr_name!r}") from None
    if kind not in RELATION_KINDS:
        raise UsageError(f"unknown relation kind {kind!r}; "
                         f"choose from {', '.join(RELATION_KINDS)}")
    return attr, kind


def _section_sizes(count: int, split: tuple[float, float, float]) -> list[int]:
    n_train = int(count * split[0])
    n_valid = int(count * (split[0] + split[1])) - n_train
    return [n_train, n_valid, count - n_train - n_valid]


def _layout_counts(section: int) -> list[int]:
    base, rem = divmod(section, len(_JOINT_ORDER))
    return [base + (1 if i < rem else 0) for i in range(len(_JOINT_ORDER))]


def cmd_gen(args) -> int:
    exclude = frozenset(_parse_pair(p) for p in args.heldout_exclude or [])
    require = frozenset(_parse_pair(p) for p in args.heldout_require or [])
    split = (0.6, 0.2, 0.2)
    layouts = list(_JOINT_ORDER) if args.layout == "joint" \
        else [Layout.from_tag(args.layout)]
    if args.layout == "joint" and args.count % len(layouts) != 0:
        raise UsageError(f"joint count must be divisible by {len(layouts)}")

    sectioned = bool(exclude and require)
    if sectioned:
        sections = _section_sizes(args.count, split)
        filters = [HeldoutFilter("exclude", exclude),
                   HeldoutFilter("exclude", exclude),
                   HeldoutFilter("require", require)]
    else:
        sections = [args.count]
        if exclude:
            filters = [HeldoutFilter("exclude", exclude)]
        elif require:
            filters = [HeldoutFilter("require", require)]
        else:
            filters = [None]

    problems = []
    index = 0
    for section, heldout in zip(sections, filters):
        counts = _layout_counts(section) if args.layout == "joint" else [section]
        for layout, n in zip(layouts, counts):
            for _ in range(n):
                problems.append(generate_problem(
                    layout, derive_seed(args.seed, index), heldout,
                    args.rel_count))
                index += 1

    manifest_filters = {
        "rel_count": args.rel_count,
        "heldout_exclude": sorted(f"{a.label}:{k}" for a, k in exclude),
        "heldout_require": sorted(f"{a.label}:{k}" for a, k in require),
        "sectioned": sectioned,
    }
    out = write_dataset(args.out, problems, args.px, args.seed, args.layout,
                        filters=manifest_filters,
                        sections=sections if sectioned else None, split=split)
    print(json.dumps({"out": str(out), "count": len(problems),
                      "layout": args.layout}))
    return 0


def _model_config(args, panel_px: int) -> ModelConfig:
    heads = args.object_heads
    return ModelConfig(object_heads=heads,
                       attr_out_per_group=80 // heads,
                       share_attr=not args.no_share_attr,
                       share_rel=not args.no_share_rel,
                       panel_px=panel_px)


def cmd_train(args) -> int:
    dataset = read_dataset(args.data)
    cfg = TrainConfig(lr=args.lr, weight_decay=args.wd, batch_size=args.batch,
                      epochs=args.epochs, seeds=args.seeds,
                      early_stop_patience=args.patience,
                      deterministic=args.deterministic)
    model_cfg = _model_config(args, dataset.panel_px)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    plan = {"command": "train", "data": str(args.data),
            "model_config": model_cfg.to_header(),
            "train_config": {k: getattr(cfg, k) for k in
                             ("lr", "weight_decay", "batch_size", "epochs",
                              "seeds", "early_stop_patience", "deterministic")}}
    with open(out / "plan.json", "w") as fh:
        json.dump(plan, fh, indent=2, sort_keys=True)
        fh.write("\n")

    epoch_dir = None
    if args.save_epoch_ckpts:
        if args.seeds != 1:
            raise UsageError("--save-epoch-ckpts requires --seeds 1")
        epoch_dir = out / "epoch_ckpts"
        epoch_dir.mkdir(exist_ok=True)

    def hook_for(seed: int):
        if epoch_dir is None:
            return None

        def hook(epoch: int, model: SCLModel) -> None:
            save_model(epoch_dir / f"epoch_{epoch:04d}.scl", model)
        return hook

    log = None if args.quiet else lambda msg: print(msg, flush=True)
    model, runs, best = train_runs(model_cfg, dataset, cfg,
                                   epoch_hook_for=hook_for, log=log,
                                   split_seed=args.split_seed)
    save_model(out / "model.scl", model)

    metrics = {"best_seed": best,
               "best_valid_acc": runs[best].best_valid_acc,
               "test_acc": runs[best].test_acc,
               "seeds": [m.to_json_obj() for m in runs]}
    with open(out / "metrics.json", "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "valid_acc"])
        for epoch, (loss, acc) in enumerate(zip(runs[best].train_loss,
                                                runs[best].valid_acc)):
            writer.writerow([epoch, loss, acc])
    print(json.dumps({"best_seed": best, "test_acc": runs[best].test_acc,
                      "valid_acc": runs[best].best_valid_acc}))
    return 0


def _split_indices(dataset, split: str, split_seed=None) -> np.ndarray:
    if split == "all":
        return np.arange(len(dataset))
    seed = dataset.manifest["seed"] if split_seed is None else split_seed
    train_idx, valid_idx, test_idx = split_dataset(
        dataset, tuple(dataset.manifest.get("split", (0.6, 0.2, 0.2))), seed)
    return {"train": train_idx, "valid": valid_idx, "test": test_idx}[split]


def cmd_eval(args) -> int:
    model, _ = load_model(args.ckpt)
    dataset = read_dataset(args.data)
    indices = _split_indices(dataset, args.split, args.split_seed)
    acc = evaluate(model, dataset, indices, mask_context=args.mask_context)
    print(json.dumps({"accuracy": acc, "split": args.split, "n": len(indices),
                      "mask_context": args.mask_context}))
    return 0


def cmd_probe(args) -> int:
    model, _ = load_model(args.ckpt)
    dataset = read_dataset(args.data)
    indices = _split_indices(dataset, args.split, args.split_seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    entries = probe_report(model, dataset, indices)
    with open(out / "probe_report.json", "w") as fh:
        json.dump({"split": args.split,
                   "entries": [e.to_json_obj() for e in entries]},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    rows = relation_embedding_rows(model, dataset, indices, entries)
    write_embedding_csv(out / "relation_embeddings.csv", rows)

    result = {"out": str(out), "entries": len(entries),
              "mean_comp_loss": mean_composition_loss(model, dataset, indices)}
    if args.coevolution:
        ckpt_dir = Path(args.coevolution)
        paths = sorted(ckpt_dir.glob("epoch_*.scl"))
        if not paths:
            raise UsageError(f"no epoch checkpoints under {ckpt_dir}")
        series = [(int(p.stem.split("_")[1]), load_model(p)[0]) for p in paths]
        rows, corr = track_coevolution(series, dataset, indices)
        with open(out / "coevolution.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "test_acc", "mean_comp_loss"])
            for row in rows:
                writer.writerow([row["epoch"], row["test_acc"],
                                 row["mean_comp_loss"]])
        result["coevolution_corr"] = corr
    print(json.dumps(result))
    return 0


def cmd_report(args) -> int:
    run = Path(args.run)
    paths = sorted(run.rglob("metrics.json"))
    if not paths:
        raise UsageError(f"no metrics.json found under {run}")
    rows = []
    for path in paths:
        data = json.loads(path.read_text())
        rows.append([str(path.parent.relative_to(run)) or ".",
                     data.get("best_seed"), f"{data.get('best_valid_acc', 0):.4f}",
                     f"{data.get('test_acc', 0):.4f}"])
    print("| run | best_seed | valid_acc | test_acc |")
    print("|---|---|---|---|")
    for row in rows:
        print("| " + " | ".join(str(v) for v in row) + " |")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scl",
                                     description="generate, train, evaluate, and probe")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a dataset")
    p.add_argument("--layout", choices=LAYOUT_TAGS, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--px", type=int, default=32)
    p.add_argument("--rel-count", type=int, default=3)
    p.add_argument("--heldout-exclude", action="append", metavar="ATTR:KIND")
    p.add_argument("--heldout-require", action="append", metavar="ATTR:KIND")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train and select over seeds")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.005)
    p.add_argument("--wd", type=float, default=0.01)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--object-heads", type=int, default=10)
    p.add_argument("--no-share-attr", action="store_true")
    p.add_argument("--no-share-rel", action="store_true")
    p.add_argument("--save-epoch-ckpts", action="store_true")
    p.add_argument("--split-seed", type=int, default=None)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "valid", "test", "all"),
                   default="test")
    p.add_argument("--split-seed", type=int, default=None)
    p.add_argument("--mask-context", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("probe", help="compositional probes and embeddings")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "valid", "test", "all"),
                   default="test")
    p.add_argument("--split-seed", type=int, default=None)
    p.add_argument("--coevolution", metavar="CKPT_DIR")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("report", help="summarize metrics in a run directory")
    p.add_argument("--run", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConstraintError, DatasetFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, ValueError, KeyError) as exc:
        print(f"abort: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
