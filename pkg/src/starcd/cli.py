"""Command-line entry points.

Subcommands: ``synth`` (write a synthetic dataset), ``train`` (run a
config-driven training run), ``eval`` (score a checkpoint on a bitemporal
set), ``ablate`` (grid sweep over head size, loss flags, label mode), and
``model-info`` (parameter counts).

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import torch

from .config import RunConfig, load_run_config
from .data import (
    SyntheticSceneSpec,
    generate_synthetic,
    load_bitemporal,
    load_single_temporal,
    save_bitemporal,
    save_single_temporal,
)
from .errors import ConfigError, ContractError, IngestionError, TrainingDivergedError
from .evaluation import compare_report, evaluate_change
from .model import (
    ChangeMixin,
    ChangeMixinConfig,
    ChangeStar,
    ReferenceBackbone,
    count_parameters,
    load_checkpoint,
)
from .training import TrainConfig, build_default_model, train_bitemporal, train_star

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _num_workers() -> int:
    raw = os.environ.get("STAR_NUM_WORKERS", "0")
    try:
        return max(0, int(raw))
    except ValueError:
        raise ConfigError(f"STAR_NUM_WORKERS must be an integer, got {raw!r}")


def _build_model(run: RunConfig) -> ChangeStar:
    torch.manual_seed(run.seed)
    backbone = ReferenceBackbone(
        in_channels=run.model.in_channels, base_width=run.model.base_width
    )
    return ChangeStar(backbone, run.model.changemixin)


def cmd_synth(args: argparse.Namespace) -> int:
    spec = SyntheticSceneSpec(
        canvas_size=args.size,
        add_fraction=args.add_fraction,
        remove_fraction=args.remove_fraction,
        seed=args.seed,
    )
    train, pairs = generate_synthetic(spec, args.n_train, args.n_eval)
    out = Path(args.out)
    save_single_temporal(train, out / "train")
    save_bitemporal(pairs, out / "eval")
    print(f"wrote {len(train)} training tiles and {len(pairs)} eval pairs to {out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    overrides = {"seed": args.seed, "out_dir": args.out, "mode": args.mode}
    run = load_run_config(args.config, {k: v for k, v in overrides.items() if v is not None})
    _num_workers()
    out_dir = Path(run.out_dir) if run.out_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        shutil.copy(args.config, out_dir / Path(args.config).name)
    model = _build_model(run)
    eval_pairs = list(load_bitemporal(run.eval_root)) if run.eval_root else None
    if run.mode == "star":
        dataset = list(load_single_temporal(run.train_root))
        result = train_star(run.train, dataset, eval_pairs, out_dir, model=model,
                            resume_from=args.resume)
    else:
        dataset = list(load_bitemporal(run.train_root))
        result = train_bitemporal(run.train, dataset, eval_pairs, out_dir, model=model,
                                  resume_from=args.resume)
    last = next((r for r in reversed(result.log) if "loss_total" in r), None)
    if last:
        print(f"finished {run.train.max_steps} steps; final loss {last['loss_total']:.4f}")
    else:
        print(f"finished {run.train.max_steps} steps")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    pairs = list(load_bitemporal(args.data))
    counts, metrics = evaluate_change(model, pairs, method=args.method)
    report = {
        "method": args.method,
        "checkpoint": str(args.checkpoint),
        "counts": {"tp": counts.tp, "fp": counts.fp, "fn": counts.fn, "tn": counts.tn},
        **metrics,
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(json.dumps(report, indent=2))
        compare_report({args.method: (model, args.method)}, pairs, out_dir=out)
    print(json.dumps(report, indent=2))
    return EXIT_OK


def _parse_list(raw: str, cast):
    return [cast(v) for v in raw.split(",") if v]


def cmd_ablate(args: argparse.Namespace) -> int:
    run = load_run_config(args.config, {"out_dir": args.out} if args.out else None)
    out_dir = Path(run.out_dir or "ablation")
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = list(load_single_temporal(run.train_root))
    if not run.eval_root:
        raise ConfigError("ablation needs data.eval_root for scoring")
    eval_pairs = list(load_bitemporal(run.eval_root))

    rows = []

    def one(tag: str, train_cfg: TrainConfig, mixin: ChangeMixinConfig):
        torch.manual_seed(train_cfg.seed)
        backbone = ReferenceBackbone(
            in_channels=run.model.in_channels, base_width=run.model.base_width
        )
        model = ChangeStar(backbone, mixin)
        result = train_star(train_cfg, dataset, model=model)
        _, ch = evaluate_change(result.model, eval_pairs, method="changestar")
        rows.append({
            "variant": tag,
            "num_layers": mixin.num_layers,
            "channels": mixin.channels,
            "use_semantic": train_cfg.use_semantic,
            "use_symmetry": train_cfg.use_symmetry,
            "label_mode": train_cfg.label_mode,
            "iou": ch["iou"],
            "f1": ch["f1"],
        })
        print(f"{tag}: IoU {ch['iou']:.4f}  F1 {ch['f1']:.4f}")

    base_mixin = run.model.changemixin
    if args.grid_n:
        for n in _parse_list(args.grid_n, int):
            one(f"N={n}", run.train, replace(base_mixin, num_layers=n))
    if args.grid_dc:
        for dc in _parse_list(args.grid_dc, int):
            one(f"d_c={dc}", run.train, replace(base_mixin, channels=dc))
    if args.flag_grid:
        # Component ablation rows: (b) bare, (c) +semantic, (d) +symmetry,
        # (e) both.
        for tag, sem, sym in [
            ("(b) baseline", False, False),
            ("(c) baseline + semantic", True, False),
            ("(d) baseline + symmetry", False, True),
            ("(e) full", True, True),
        ]:
            one(tag, replace(run.train, use_semantic=sem, use_symmetry=sym), base_mixin)
    if args.label_modes:
        for m in _parse_list(args.label_modes, str):
            one(f"label={m}", replace(run.train, label_mode=m), base_mixin)
    if not rows:
        one("single", run.train, base_mixin)
    (out_dir / "sweep.json").write_text(json.dumps(rows, indent=2))
    print(f"wrote {out_dir / 'sweep.json'}")
    return EXIT_OK


def cmd_model_info(args: argparse.Namespace) -> int:
    backbone = ReferenceBackbone(in_channels=args.in_channels, base_width=args.base_width)
    mixin_cfg = ChangeMixinConfig(num_layers=args.num_layers, channels=args.channels)
    model = ChangeStar(backbone, mixin_cfg)
    n_backbone = count_parameters(backbone)
    n_mixin = count_parameters(model.change_mixin)
    print(f"backbone parameters:     {n_backbone}")
    print(f"change head parameters:  {n_mixin}")
    print(f"total parameters:        {n_backbone + n_mixin}")
    print(f"change head overhead:    {n_mixin / n_backbone:.2%} of backbone")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="starcd", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--n-train", type=int, default=500)
    sp.add_argument("--n-eval", type=int, default=100)
    sp.add_argument("--size", type=int, default=128)
    sp.add_argument("--add-fraction", type=float, default=0.3)
    sp.add_argument("--remove-fraction", type=float, default=0.3)
    sp.set_defaults(func=cmd_synth)

    tp = sub.add_parser("train", help="run a config-driven training run")
    tp.add_argument("--config", required=True)
    tp.add_argument("--seed", type=int)
    tp.add_argument("--out")
    tp.add_argument("--mode", choices=["star", "bitemporal"])
    tp.add_argument("--resume", help="checkpoint directory to resume from")
    tp.set_defaults(func=cmd_train)

    ep = sub.add_parser("eval", help="evaluate a checkpoint on a bitemporal set")
    ep.add_argument("--checkpoint", required=True)
    ep.add_argument("--data", required=True)
    ep.add_argument("--method", choices=["changestar", "pcc"], default="changestar")
    ep.add_argument("--out")
    ep.set_defaults(func=cmd_eval)

    ap = sub.add_parser("ablate", help="sweep head size, loss flags, label modes")
    ap.add_argument("--config", required=True)
    ap.add_argument("--out")
    ap.add_argument("--grid-n", help="comma-separated conv layer counts")
    ap.add_argument("--grid-dc", help="comma-separated channel counts")
    ap.add_argument("--flag-grid", action="store_true",
                    help="run the four loss-flag component variants")
    ap.add_argument("--label-modes", help="comma-separated label modes (xor,or)")
    ap.set_defaults(func=cmd_ablate)

    mp = sub.add_parser("model-info", help="print parameter counts")
    mp.add_argument("--in-channels", type=int, default=3)
    mp.add_argument("--base-width", type=int, default=16)
    mp.add_argument("--num-layers", type=int, default=4)
    mp.add_argument("--channels", type=int, default=16)
    mp.set_defaults(func=cmd_model_info)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IngestionError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ContractError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
