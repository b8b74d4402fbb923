"""Command-line surface.

Subcommands: gen-data, train, infer, eval, gridsearch, gradcheck.
Common flags: --config (key = value file), --seed (overrides the config
seed), --out (overrides the config output directory), --threads.

Exit codes: 0 success, 1 usage or config error, 2 verification failure
(a gradcheck suite over tolerance, or training loss going non-finite),
3 I/O error (missing or malformed files).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .gradcheck import run_all
from .inference import ThresholdSet, run_pipeline
from .metrics import grid_search_thresholds, metrics_report
from .network import load_checkpoint, save_checkpoint
from .pnm import image_to_unit, read_pgm, read_ppm, write_pgm, write_probmaps
from .proposals import load_proposals, naive_proposals, objectness_map
from .synthetic import generate_dataset, read_dataset, write_dataset, write_manifest
from .training import loss_log_csv, train_model

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY = 2
EXIT_IO = 3


class UsageError(Exception):
    pass


class IoFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); keep codes ours
        raise UsageError(message)


def _limit_threads(n: int) -> None:
    """Best effort: cap BLAS/OpenMP pools.  Determinism never depends on it."""
    if n < 1:
        raise UsageError(f"--threads must be >= 1, got {n}")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        import threadpoolctl

        global _thread_limiter
        _thread_limiter = threadpoolctl.threadpool_limits(limits=n)
    except ImportError:
        pass


def _load_config(args) -> tuple[cfgmod.RunConfig, str | None, dict]:
    text = None
    if args.config is not None:
        try:
            with open(args.config) as f:
                text = f.read()
        except OSError as e:
            raise IoFailure(f"cannot read config {args.config}: {e}") from None
        try:
            cfg = cfgmod.parse_config(text)
        except ValueError as e:
            raise UsageError(str(e)) from None
    else:
        cfg = cfgmod.RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if overrides:
        try:
            cfg = dataclasses.replace(cfg, **overrides).validated()
        except ValueError as e:
            raise UsageError(str(e)) from None
    return cfg, text, overrides


def _read_artifact(what: str, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except (OSError, ValueError) as e:
        raise IoFailure(f"{what}: {e}") from None


def _out_dir(cfg) -> Path:
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoFailure(f"cannot create output directory {out}: {e}") from None
    return out


def _write_echo(out: Path, text: str | None, overrides: dict) -> None:
    (out / "config.txt").write_text(cfgmod.echo_config(text, overrides))


def cmd_gen_data(cfg, text, overrides) -> int:
    out = _out_dir(cfg)
    samples = generate_dataset(cfg.num_classes, cfg.per_class, cfg.image_size, cfg.seed,
                               clutter=cfg.clutter)
    try:
        write_dataset(out, samples)
    except OSError as e:
        raise IoFailure(f"cannot write dataset: {e}") from None
    counts = {}
    for s in samples:
        counts[str(s.label)] = counts.get(str(s.label), 0) + 1
    write_manifest(out, {
        "seed": cfg.seed,
        "num_classes": cfg.num_classes,
        "per_class": cfg.per_class,
        "image_size": cfg.image_size,
        "count": len(samples),
        "label_counts": counts,
    })
    _write_echo(out, text, overrides)
    print(f"wrote {len(samples)} samples to {out}")
    return EXIT_OK


def cmd_train(cfg, text, overrides) -> int:
    samples = _read_artifact(f"dataset {cfg.dataset}", read_dataset, cfg.dataset, with_masks=False)
    out = _out_dir(cfg)
    _write_echo(out, text, overrides)
    result = train_model(
        samples,
        cfgmod.network_spec(cfg),
        cfgmod.aggregator(cfg),
        cfgmod.optimizer_config(cfg),
        cfgmod.jitter_spec(cfg),
        batch_size=cfg.batch_size,
        train_steps=cfg.train_steps,
        seed=cfg.seed,
        crop_size=cfg.crop_size,
    )
    save_checkpoint(out / "checkpoint.bin", result.spec, result.params)
    (out / "loss_log.csv").write_text(loss_log_csv(result.loss_log))
    if not result.ok:
        print(
            f"training aborted: non-finite loss at step {result.diverged_at}; "
            f"checkpoint holds the last finite state ({len(result.loss_log)} good steps)",
            file=sys.stderr,
        )
        return EXIT_VERIFY
    final = result.loss_log[-1].mean_loss if result.loss_log else float("nan")
    print(f"trained {cfg.train_steps} steps; final mean loss {final:.6f}; checkpoint in {out}")
    return EXIT_OK


def _load_thresholds(path: str, num_foreground: int) -> ThresholdSet:
    data = _read_artifact(f"thresholds {path}", lambda: json.loads(Path(path).read_text()))
    table = data.get("thresholds", data) if isinstance(data, dict) else None
    if not isinstance(table, dict):
        raise IoFailure(f"thresholds {path}: expected a JSON object")
    try:
        values = tuple(float(table[str(k)]) for k in range(1, num_foreground + 1))
    except KeyError as e:
        raise IoFailure(f"thresholds {path}: missing class {e}") from None
    return ThresholdSet(values=values)


def _gather_inputs(args, cfg) -> list[tuple[str, np.ndarray]]:
    """(name, raw unit image) pairs from --data or explicit image paths."""
    if args.data is not None and args.images:
        raise UsageError("give either --data or image paths, not both")
    if args.data is not None:
        samples = _read_artifact(f"dataset {args.data}", read_dataset, args.data, with_masks=False)
        return [(f"{i:05d}", s.image) for i, s in enumerate(samples)]
    if not args.images:
        raise UsageError("no inputs: pass --data DIR or one or more PPM image paths")
    out = []
    for p in args.images:
        img = _read_artifact(f"image {p}", read_ppm, p)
        out.append((Path(p).stem, image_to_unit(img)))
    return out


def _proposals_for(args, image: np.ndarray, multi: bool):
    if args.proposals is not None:
        if multi:
            raise UsageError("--proposals holds regions for one image; use --naive-proposals for batches")
        return _read_artifact(f"proposals {args.proposals}", load_proposals, args.proposals)
    if args.naive_proposals is not None:
        if args.naive_proposals <= 0:
            raise UsageError("--naive-proposals must be positive")
        return naive_proposals(image, args.naive_proposals)
    raise UsageError("proposal-based smoothing needs --proposals FILE or --naive-proposals N")


def cmd_infer(cfg, text, overrides, args) -> int:
    spec, params = _read_artifact(f"checkpoint {args.checkpoint}", load_checkpoint, args.checkpoint)
    inputs = _gather_inputs(args, cfg)
    thresholds = None
    if args.thresholds is not None:
        thresholds = _load_thresholds(args.thresholds, spec.num_classes - 1)
    out = _out_dir(cfg)
    _write_echo(out, text, overrides)
    needs_props = cfg.prior in ("ilp+bb", "ilp+seg")
    for name, image in inputs:
        proposals = _proposals_for(args, image, len(inputs) > 1) if needs_props else None
        settings = cfgmod.prior_settings(cfg, thresholds=thresholds, proposals=proposals)
        result = run_pipeline(image, params, spec, settings, upsample_fallback=cfg.upsample_fallback)
        write_pgm(out / f"{name}.pgm", result.mask.astype(np.uint8))
        if args.dump_probmaps:
            write_probmaps(out / f"{name}.probmaps", result.probs)
    print(f"wrote {len(inputs)} mask(s) to {out}")
    return EXIT_OK


def _collect_masks(d: Path) -> dict[str, Path]:
    if (d / "masks").is_dir():
        d = d / "masks"
    return {p.stem: p for p in sorted(d.glob("*.pgm"))}


def cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    preds = _collect_masks(pred_dir)
    gts = _collect_masks(gt_dir)
    if not preds:
        raise IoFailure(f"no .pgm masks under {pred_dir}")
    missing_gt = sorted(set(preds) - set(gts))
    missing_pred = sorted(set(gts) - set(preds))
    if missing_gt or missing_pred:
        raise IoFailure(
            "unpaired masks: "
            + (f"no ground truth for {missing_gt} " if missing_gt else "")
            + (f"no prediction for {missing_pred}" if missing_pred else "")
        )
    keys = sorted(preds)
    pred_masks = [_read_artifact(str(preds[k]), read_pgm, preds[k]).astype(np.int64) for k in keys]
    gt_masks = [_read_artifact(str(gts[k]), read_pgm, gts[k]).astype(np.int64) for k in keys]
    try:
        report = metrics_report(pred_masks, gt_masks)
    except ValueError as e:
        raise IoFailure(str(e)) from None
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.report is not None:
        Path(args.report).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_gridsearch(cfg, text, overrides, args) -> int:
    if cfg.prior not in ("ilp+bb", "ilp+seg"):
        raise UsageError(
            f"threshold search applies to proposal-based smoothing (prior = ilp+bb or ilp+seg), config has {cfg.prior!r}"
        )
    spec, params = _read_artifact(f"checkpoint {args.checkpoint}", load_checkpoint, args.checkpoint)
    samples = _read_artifact(f"dataset {args.data}", read_dataset, args.data, with_masks=True)
    if len(cfg.threshold_grid) == 0:
        raise UsageError("threshold_grid is empty")
    _write_echo(_out_dir(cfg), text, overrides)
    weighted_list, obj_list, gt_list = [], [], []
    multi = len(samples) > 1
    for s in samples:
        settings = cfgmod.prior_settings(cfg, proposals=_proposals_for(args, s.image, multi))
        result = run_pipeline(s.image, params, spec, settings, upsample_fallback=cfg.upsample_fallback)
        weighted_list.append(result.weighted)
        obj_list.append(objectness_map(settings.proposals, s.image.shape[1], s.image.shape[2]))
        gt_list.append(s.gt_mask)
    ts = grid_search_thresholds(weighted_list, obj_list, gt_list, cfg.threshold_grid, spec.num_classes - 1)
    payload = {"thresholds": {str(k + 1): v for k, v in enumerate(ts.values)}}
    out_path = Path(args.out_file) if args.out_file else _out_dir(cfg) / "thresholds.json"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(cfg) -> int:
    results = run_all(cfg.seed)
    for r in results:
        print(r.line())
    if any(not r.passed for r in results):
        print("gradient verification FAILED", file=sys.stderr)
        return EXIT_VERIFY
    print("all gradient suites passed")
    return EXIT_OK


def _build_parser() -> _Parser:
    parser = _Parser(prog="milseg", description="Weakly supervised segmentation from image-level labels.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--threads", type=int, help="cap math-library worker threads")

    common(sub.add_parser("gen-data", help="write a synthetic dataset"))
    common(sub.add_parser("train", help="train from images and image-level labels"))

    p = sub.add_parser("infer", help="dense masks for images via the prior cascade")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset directory to run on")
    p.add_argument("images", nargs="*", help="PPM image paths")
    p.add_argument("--thresholds", help="thresholds JSON from gridsearch")
    p.add_argument("--proposals", help="proposal file (single image)")
    p.add_argument("--naive-proposals", type=int, help="generate N proposals per image")
    p.add_argument("--dump-probmaps", action="store_true", help="also write raw probability planes")

    p = sub.add_parser("eval", help="score predicted masks against ground truth")
    common(p)
    p.add_argument("--pred", required=True, help="directory of predicted .pgm masks")
    p.add_argument("--gt", required=True, help="dataset directory or directory of .pgm masks")
    p.add_argument("--report", help="also write the JSON report here")

    p = sub.add_parser("gridsearch", help="per-class confidence threshold search")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="validation dataset with masks")
    p.add_argument("--proposals", help="proposal file (single image)")
    p.add_argument("--naive-proposals", type=int, help="generate N proposals per image")
    p.add_argument("--out-file", help="where to write thresholds JSON")

    common(sub.add_parser("gradcheck", help="finite-difference verification suites"))
    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        if args.threads is not None:
            _limit_threads(args.threads)
        cfg, text, overrides = _load_config(args)
        if args.command == "gen-data":
            return cmd_gen_data(cfg, text, overrides)
        if args.command == "train":
            return cmd_train(cfg, text, overrides)
        if args.command == "infer":
            return cmd_infer(cfg, text, overrides, args)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "gridsearch":
            return cmd_gridsearch(cfg, text, overrides, args)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except IoFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
