"""Acceptance gate: every criterion at its stated tolerance, one line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the PASS/FAIL lines.
The two training runs (criteria 6 and 7) dominate the runtime at roughly a
minute each; everything else finishes in seconds.
"""

import time
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

from braunet.attention import BiLevelRoutingAttention, BraConfig, ConfigError, TOPK_ALL
from braunet.autodiff import Tensor, no_grad
from braunet.data import synthetic_corpus
from braunet.gradcheck import run_block_suite, run_model_suite, run_primitive_suite
from braunet.metrics import (
    SegMask,
    angle_of_progression,
    asd,
    challenge_score,
    dsc,
    hausdorff,
    structure_mask,
)
from braunet.model import BraUNet, default_config, toy_config
from braunet.reference import (
    asd_reference,
    dense_attention,
    dsc_reference,
    hausdorff_reference,
)
from braunet.train import TrainConfig, train, validate_cases, windowed_means

from test_aop import SCENES, disk_scene


def criterion(cid: str, name: str, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {cid} {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{cid} {name}: {detail}"


OVERFIT_CONFIG = TrainConfig(
    learning_rate=1e-3, batch_size=8, epochs=500, seed=3,
    flip_prob=0.0, rot_degrees=0.0, val_interval=100,
)


def run_overfit(out_dir):
    cases = synthetic_corpus(8, seed=5, size=64)
    model = BraUNet(toy_config(), seed=7)
    start = time.monotonic()
    result = train(model, cases, cases, OVERFIT_CONFIG, out_dir=out_dir)
    elapsed = time.monotonic() - start
    mean_dsc, _ = validate_cases(model, cases)
    return SimpleNamespace(
        losses=result.losses,
        elapsed=elapsed,
        mean_dsc=mean_dsc,
        checkpoint_bytes=result.last_path.read_bytes(),
        log_bytes=(out_dir / "metrics.jsonl").read_bytes(),
    )


@pytest.fixture(scope="module")
def overfit_run_a(tmp_path_factory):
    return run_overfit(tmp_path_factory.mktemp("overfit_a"))


def test_c1_dense_attention_oracle():
    start = time.monotonic()
    rng = np.random.default_rng(101)
    attn = BiLevelRoutingAttention(8, BraConfig(region_grid=4, topk=TOPK_ALL, heads=2),
                                   rng=np.random.default_rng(102), dtype=np.float64)
    x = rng.normal(size=(2, 16, 16, 8))
    with no_grad():
        sparse = attn.forward(Tensor(x, dtype=np.float64)).numpy()
    dense = dense_attention(
        x, attn.wq.weight.numpy(), attn.wk.weight.numpy(), attn.wv.weight.numpy(),
        attn.wo.weight.numpy(), attn.wo.bias.numpy(),
        attn.lce.weight.numpy(), attn.lce.bias.numpy(), heads=2,
    )
    diff = float(np.abs(sparse - dense).max())
    elapsed = time.monotonic() - start
    criterion("C1", "dense-attention oracle equivalence",
              diff < 1e-5 and elapsed < 10.0,
              f"max_diff={diff:.2e}, {elapsed:.1f}s")


def test_c2_gradient_suite():
    start = time.monotonic()
    results = run_primitive_suite(7) + run_block_suite(7) + run_model_suite(7)
    elapsed = time.monotonic() - start
    worst = max(results, key=lambda r: r.max_error / r.tolerance)
    criterion("C2", "finite-difference gradient suite",
              all(r.ok for r in results) and elapsed < 300.0,
              f"{len(results)} checks, worst {worst.name} at {worst.max_error:.2e} "
              f"(tol {worst.tolerance:.0e}), {elapsed:.0f}s")


def test_c3_score_formula_reproduction():
    composite = challenge_score(0.88, 0.80, 0.87, 20.03, 14.07, 21.87,
                                7.10, 4.21, 6.06, 12.20)
    perfect = challenge_score(1, 1, 1, 0, 0, 0, 0, 0, 0, 0)
    worst = challenge_score(0, 0, 0, 100, 100, 100, 100, 100, 100, 180)
    ok = (abs(composite - 0.898) < 2e-3 and abs(composite - 0.8974) < 2e-3
          and perfect == 1.0 and worst == 0.0)
    criterion("C3", "composite score reproduction", ok,
              f"composite={composite:.6f}, perfect={perfect}, worst={worst}")


def test_c4_metric_oracles():
    start = time.monotonic()
    rng = np.random.default_rng(404)
    checked = 0
    worst_dist = 0.0
    for _ in range(50):
        def draw():
            labels = np.zeros((32, 32), dtype=np.uint8)
            labels[rng.random((32, 32)) < 0.25] = 1
            labels[rng.random((32, 32)) < 0.25] = 2
            return SegMask(labels)

        pred, gt = draw(), draw()
        for structure in ("PS", "FH", "ALL"):
            fa = structure_mask(pred, structure)
            fb = structure_mask(gt, structure)
            if not (fa.any() and fb.any()):
                continue
            assert dsc(pred, gt, structure) == dsc_reference(fa, fb)
            hd_diff = abs(hausdorff(pred, gt, structure) - hausdorff_reference(fa, fb))
            asd_diff = abs(asd(pred, gt, structure) - asd_reference(fa, fb))
            worst_dist = max(worst_dist, hd_diff, asd_diff)
            assert hd_diff < 1e-9 and asd_diff < 1e-9
            checked += 1
    elapsed = time.monotonic() - start
    criterion("C4", "distance metrics vs brute-force oracles",
              checked == 150 and elapsed < 30.0,
              f"{checked} comparisons, worst dist diff {worst_dist:.1e}, {elapsed:.0f}s")


def test_c5_aop_geometry():
    worst = 0.0
    for theta, d, radius in SCENES:
        mask, expected = disk_scene(theta, d, radius)
        got = angle_of_progression(SegMask(mask)).aop
        rotated = angle_of_progression(SegMask(np.rot90(mask).copy())).aop
        worst = max(worst, abs(got - expected), abs(rotated - expected))
    criterion("C5", "axis-tangent angle vs closed form",
              worst < 0.5, f"{len(SCENES)} scenes (+rot90), worst err {worst:.3f} deg")


def test_c6_training_smoke(overfit_run_a):
    run = overfit_run_a
    windows = windowed_means(run.losses, 50)[:10]
    decreasing = all(b < a for a, b in zip(windows, windows[1:]))
    ok = (len(run.losses) == 500 and run.mean_dsc > 0.95
          and decreasing and run.elapsed < 900.0)
    criterion("C6", "synthetic overfit smoke test", ok,
              f"dsc={run.mean_dsc:.4f}, windows decreasing={decreasing}, "
              f"{run.elapsed:.0f}s for 500 steps")


def test_c7_determinism(overfit_run_a, tmp_path):
    run_b = run_overfit(tmp_path / "overfit_b")
    same_losses = run_b.losses == overfit_run_a.losses
    same_bytes = run_b.checkpoint_bytes == overfit_run_a.checkpoint_bytes
    same_log = run_b.log_bytes == overfit_run_a.log_bytes
    criterion("C7", "seeded end-to-end determinism",
              same_losses and same_bytes and same_log,
              f"losses identical={same_losses}, checkpoint bytes identical={same_bytes}, "
              f"log identical={same_log}")


def test_c8_shape_and_config_matrix():
    toy = BraUNet(toy_config(), seed=1)
    with no_grad():
        toy_logits = toy.forward(Tensor(np.zeros((1, 1, 64, 64), dtype=np.float32)))
    assert toy_logits.shape == (1, 3, 64, 64)

    full = BraUNet(default_config(), seed=1)
    with no_grad():
        full_logits = full.forward(Tensor(np.zeros((1, 3, 224, 224), dtype=np.float32)))
    assert full_logits.shape == (1, 3, 224, 224)

    rejected = 0
    with pytest.raises(ConfigError):
        full.forward(Tensor(np.zeros((1, 3, 100, 100), dtype=np.float32)))
    rejected += 1
    with pytest.raises(ConfigError):
        replace(toy_config(), input_size=(96, 100)).validate()
    rejected += 1

    criterion("C8", "shape/config matrix", rejected == 2,
              "toy 64->64 and full 224->224 logits, non-divisible inputs rejected")
