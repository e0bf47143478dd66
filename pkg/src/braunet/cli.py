"""Command-line interface: train, eval, predict, score, gradcheck, selfcheck.

Exit codes: 0 success, 1 validation or check failure, 2 usage error.

A run configuration is a JSON file with two sections, each listing every
field explicitly (unknown or missing keys are errors)::

    {"model": {... ModelConfig fields ...}, "train": {... TrainConfig fields ...}}
"""

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .attention import ConfigError
from .checkpoint import CheckpointError
from .data import (
    DatasetError,
    build_index,
    load_case,
    normalize_image,
    read_image,
    read_mask,
    write_mask,
)
from .metrics import SegMask, aggregate_reports, challenge_score, evaluate_pair
from .model import (
    BraUNet,
    ModelConfig,
    model_config_from_dict,
    model_config_to_dict,
)
from .train import (
    TrainConfig,
    TrainingDiverged,
    predict,
    train,
    train_config_from_dict,
    train_config_to_dict,
)


def load_run_config(path) -> tuple[ModelConfig, TrainConfig]:
    raw = json.loads(Path(path).read_text())
    if set(raw) != {"model", "train"}:
        raise ConfigError(f"{path}: config must have exactly the sections 'model' and 'train'")
    return model_config_from_dict(raw["model"]), train_config_from_dict(raw["train"])


def save_run_config(path, model_cfg: ModelConfig, train_cfg: TrainConfig) -> None:
    payload = {"model": model_config_to_dict(model_cfg), "train": train_config_to_dict(train_cfg)}
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


# -- commands -------------------------------------------------------------------


def cmd_train(args) -> int:
    model_cfg, train_cfg = load_run_config(args.config)
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    index = build_index(args.data, train_cfg.split_ratio, train_cfg.seed)
    train_cases = [load_case(c, model_cfg.in_channels) for c in index.train]
    val_cases = [load_case(c, model_cfg.in_channels) for c in index.val]
    model = BraUNet(model_cfg, seed=train_cfg.seed)
    result = train(model, train_cases, val_cases, train_cfg, out_dir=args.out)
    print(f"trained {len(result.losses)} steps; final loss {result.losses[-1]:.6f}")
    if result.epoch_records:
        print(f"best val dsc {result.best_val_dsc:.4f}; checkpoint {result.best_path}")
    print(f"last checkpoint {result.last_path}")
    return 0


def _report_lines(reports_by_name, out_path=None):
    lines = []
    for name, report in reports_by_name:
        payload = {"case": name}
        payload.update(report.to_dict())
        lines.append(json.dumps(payload))
    summary = aggregate_reports([r for _, r in reports_by_name])
    lines.append(json.dumps({"summary": summary}))
    for line in lines:
        print(line)
    if out_path is not None:
        Path(out_path).write_text("\n".join(lines) + "\n")
    return summary


def cmd_eval(args) -> int:
    model_cfg, train_cfg = load_run_config(args.config)
    index = build_index(args.data, train_cfg.split_ratio, train_cfg.seed)
    cases = index.val if args.split == "val" else index.train
    if not cases:
        raise DatasetError(f"split {args.split!r} is empty")
    model = BraUNet(model_cfg, seed=train_cfg.seed)
    model.load(args.checkpoint)
    reports = []
    for case in cases:
        image, mask = load_case(case, model_cfg.in_channels)
        pred = predict(model, image)
        reports.append((case.name, evaluate_pair(pred, SegMask(mask))))
    _report_lines(reports, args.out)
    return 0


def cmd_predict(args) -> int:
    model_cfg, train_cfg = load_run_config(args.config)
    model = BraUNet(model_cfg, seed=train_cfg.seed)
    model.load(args.checkpoint)
    image_dir = Path(args.data) / "images"
    paths = sorted(image_dir.glob("*.png"))
    if not paths:
        raise DatasetError(f"no .png images under {image_dir}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in paths:
        image = normalize_image(read_image(path, model_cfg.in_channels))
        mask = predict(model, image)
        write_mask(out_dir / path.name, mask.labels)
    print(f"wrote {len(paths)} masks to {out_dir}")
    return 0


def cmd_score(args) -> int:
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    pred_files = {p.name: p for p in sorted(pred_dir.glob("*.png"))}
    gt_files = {p.name: p for p in sorted(gt_dir.glob("*.png"))}
    if set(pred_files) != set(gt_files):
        only_pred = sorted(set(pred_files) - set(gt_files))
        only_gt = sorted(set(gt_files) - set(pred_files))
        raise DatasetError(f"mask sets differ: only in pred {only_pred}, only in gt {only_gt}")
    if not pred_files:
        raise DatasetError("no mask files to score")
    reports = []
    for name in sorted(pred_files):
        pred = SegMask(read_mask(pred_files[name]))
        gt = SegMask(read_mask(gt_files[name]))
        reports.append((name, evaluate_pair(pred, gt)))
    summary = _report_lines(reports, args.out)
    print(f"mean score {summary['mean_score']:.4f} over {summary['cases']} cases")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_block_suite, run_model_suite, run_primitive_suite

    results = run_primitive_suite(args.seed) + run_block_suite(args.seed)
    if not args.fast:
        results += run_model_suite(args.seed)
    failures = 0
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        print(f"{r.name:28s} max_err={r.max_error:.3e} tol={r.tolerance:.0e} {status}")
        failures += not r.ok
    print(f"{len(results) - failures}/{len(results)} gradient checks passed")
    return 0 if failures == 0 else 1


def cmd_selfcheck(args) -> int:
    from . import reference
    from .attention import BiLevelRoutingAttention, BraConfig
    from .autodiff import Tensor, no_grad, topk_indices
    from .metrics import asd, dsc, hausdorff

    rng = np.random.default_rng(args.seed)
    checks: list[tuple[str, bool, str]] = []

    # sparse path with all regions routed == dense attention
    x = rng.normal(size=(2, 16, 16, 8))
    attn = BiLevelRoutingAttention(8, BraConfig(region_grid=4, topk=-2, heads=2),
                                   rng=np.random.default_rng(args.seed + 1), dtype=np.float64)
    with no_grad():
        sparse = attn.forward(Tensor(x, dtype=np.float64)).numpy()
    dense = reference.dense_attention(
        x, attn.wq.weight.numpy(), attn.wk.weight.numpy(), attn.wv.weight.numpy(),
        attn.wo.weight.numpy(), attn.wo.bias.numpy(),
        attn.lce.weight.numpy(), attn.lce.bias.numpy(), heads=2,
    )
    diff = float(np.abs(sparse - dense).max())
    checks.append(("dense_attention_equivalence", diff < 1e-5, f"max_diff={diff:.3e}"))

    # top-k selection against the sort-based reference
    ok = True
    for _ in range(50):
        vals = rng.normal(size=int(rng.integers(1, 33)))
        vals[rng.random(len(vals)) < 0.3] = 0.5  # force ties
        k = int(rng.integers(1, len(vals) + 1))
        if not np.array_equal(topk_indices(vals, k), reference.topk_reference(vals, k)):
            ok = False
            break
    checks.append(("topk_matches_reference", ok, "50 random cases"))

    # metric spot checks against all-pairs references
    ok = True
    detail = ""
    for _ in range(5):
        a = rng.random((24, 24)) < 0.3
        b = rng.random((24, 24)) < 0.3
        if not (a.any() and b.any()):
            continue
        ma = SegMask(a.astype(np.uint8))
        mb = SegMask(b.astype(np.uint8))
        if dsc(ma, mb, "PS") != reference.dsc_reference(a, b):
            ok, detail = False, "dsc mismatch"
            break
        if abs(hausdorff(ma, mb, "PS") - reference.hausdorff_reference(a, b)) > 1e-9:
            ok, detail = False, "hausdorff mismatch"
            break
        if abs(asd(ma, mb, "PS") - reference.asd_reference(a, b)) > 1e-9:
            ok, detail = False, "asd mismatch"
            break
    checks.append(("metrics_match_reference", ok, detail or "5 random mask pairs"))

    # composite score endpoints and the published component set
    perfect = challenge_score(1, 1, 1, 0, 0, 0, 0, 0, 0, 0)
    worst = challenge_score(0, 0, 0, 100, 100, 100, 100, 100, 100, 180)
    composite = challenge_score(0.88, 0.80, 0.87, 20.03, 14.07, 21.87, 7.10, 4.21, 6.06, 12.20)
    checks.append(("score_endpoints", perfect == 1.0 and worst == 0.0,
                   f"perfect={perfect} worst={worst}"))
    checks.append(("score_reference_components", abs(composite - 0.8974) < 2e-3,
                   f"score={composite:.6f}"))

    failures = 0
    for name, ok, detail in checks:
        print(f"{name:32s} {'PASS' if ok else 'FAIL'}  {detail}")
        failures += not ok
    print(f"{len(checks) - failures}/{len(checks)} self checks passed")
    return 0 if failures == 0 else 1


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="braunet",
        description="Routing-attention segmentation: training, inference, and scoring.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--data", required=True, help="dataset root with images/ and masks/")
    p.add_argument("--out", required=True, help="output directory for checkpoints and logs")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint over a dataset split")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val"), default="val")
    p.add_argument("--out", default=None, help="also write the JSONL report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write predicted masks for a directory of images")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="directory containing images/")
    p.add_argument("--out", required=True, help="directory for predicted masks")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("score", help="compare two directories of mask files")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fast", action="store_true", help="skip the full-model check")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("selfcheck", help="oracle equivalence checks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selfcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetError, CheckpointError, TrainingDiverged, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
