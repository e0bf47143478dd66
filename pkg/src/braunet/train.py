"""Training loop, segmentation loss, Adam optimizer, and prediction.

Everything downstream of the seed is deterministic: the epoch shuffle stream
is derived from the seed alone, and each sample's augmentation generator is
keyed by (seed, epoch, sample index), so prefetch or batching order can never
change the realized transforms.
"""

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .autodiff import Tensor, exp, log_softmax, no_grad
from .data import augment
from .metrics import EmptyRegionError, SegMask, WORST_DISTANCE, dsc, hausdorff
from .model import BraUNet

DICE_EPS = 1e-6


class TrainingDiverged(RuntimeError):
    """Loss left the finite range; carries the failing step and learning rate."""

    def __init__(self, step: int, learning_rate: float):
        super().__init__(f"non-finite loss at step {step} (lr={learning_rate})")
        self.step = step
        self.learning_rate = learning_rate


@dataclass(frozen=True)
class TrainConfig:
    """Optimization and augmentation settings; all fields explicit in config files."""

    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 4
    epochs: int = 10
    seed: int = 0
    flip_prob: float = 0.5
    rot_degrees: float = 15.0
    w_ce: float = 0.4
    w_dice: float = 0.6
    split_ratio: float = 0.9
    val_interval: int = 1

    def validate(self) -> None:
        # learning rate 0 is allowed: it turns training into a null optimizer
        if not (self.learning_rate >= 0 and self.batch_size > 0 and self.epochs > 0):
            raise ValueError("learning rate must be non-negative; batch size and epochs positive")
        if not (0.0 <= self.flip_prob <= 1.0 and 0.0 <= self.split_ratio <= 1.0):
            raise ValueError("probabilities must lie in [0, 1]")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0 and self.adam_eps > 0):
            raise ValueError("invalid Adam hyperparameters")
        if self.rot_degrees < 0 or self.w_ce < 0 or self.w_dice < 0 or self.val_interval < 1:
            raise ValueError("negative augmentation/loss/validation settings")


def train_config_from_dict(d: dict) -> TrainConfig:
    expected = set(TrainConfig.__dataclass_fields__)
    if set(d) != expected:
        missing = sorted(expected - set(d))
        extra = sorted(set(d) - expected)
        raise ValueError(f"train config keys: missing={missing} unknown={extra}")
    cfg = TrainConfig(**d)
    cfg.validate()
    return cfg


def train_config_to_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)


# -- loss ---------------------------------------------------------------------------


def seg_loss(logits: Tensor, targets: np.ndarray, w_ce: float, w_dice: float) -> Tensor:
    """Weighted pixel cross-entropy plus soft-Dice complement over foreground classes.

    ``logits`` is [B, classes, H, W]; ``targets`` an integer [B, H, W] map.
    """
    b, n_classes, h, w = logits.shape
    targets = np.asarray(targets)
    if targets.shape != (b, h, w):
        raise ValueError(f"target shape {targets.shape} does not match logits {logits.shape}")
    if targets.min() < 0 or targets.max() >= n_classes:
        raise ValueError(f"target labels outside [0, {n_classes - 1}]")

    onehot = np.zeros(logits.shape, dtype=logits.data.dtype)
    np.put_along_axis(onehot, targets[:, None].astype(np.int64), 1.0, axis=1)
    onehot_t = Tensor(onehot)

    logp = log_softmax(logits, axis=1)
    ce = -((logp * onehot_t).sum(axis=1).mean())

    probs = exp(logp)
    dice_terms = []
    for c in range(1, n_classes):
        p_c = probs[:, c]
        t_c = onehot[:, c]
        intersection = (p_c * Tensor(t_c)).sum()
        denom = p_c.sum() + float(t_c.sum())
        dice_terms.append((2.0 * intersection + DICE_EPS) / (denom + DICE_EPS))
    mean_dice = dice_terms[0]
    for term in dice_terms[1:]:
        mean_dice = mean_dice + term
    mean_dice = mean_dice * (1.0 / len(dice_terms))
    dice_loss = 1.0 - mean_dice

    return w_ce * ce + w_dice * dice_loss


# -- optimizer ----------------------------------------------------------------------


class Adam:
    """Bias-corrected Adam over a fixed parameter list.

    Parameters whose gradient is unset are skipped, so a step after
    ``zero_grad`` leaves every parameter (and its moments) untouched.
    """

    def __init__(self, params: list[Tensor], learning_rate=1e-4,
                 beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.step_count
        bias2 = 1.0 - b2 ** self.step_count
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * (g * g)
            m_hat = self.m[i] / bias1
            v_hat = self.v[i] / bias2
            p.data -= (self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


# -- prediction and validation ---------------------------------------------------------


def logits_to_labels(logits: np.ndarray) -> np.ndarray:
    """Argmax over the class axis of [classes, H, W]; ties to the lowest class."""
    return np.argmax(np.asarray(logits), axis=0).astype(np.uint8)


def predict(model: BraUNet, image: np.ndarray, pixel_spacing: float = 1.0) -> SegMask:
    """Segment one [C, H, W] image into a label mask."""
    x = Tensor(np.asarray(image, dtype=np.float32)[None])
    with no_grad():
        logits = model.forward(x, training=False)
    return SegMask(logits_to_labels(logits.numpy()[0]), pixel_spacing)


def validate_cases(model: BraUNet, cases) -> tuple[float, float]:
    """(mean foreground DSC, mean foreground HD) over (image, mask) pairs.

    Empty regions fall back to the worst distance clamp instead of aborting.
    """
    dscs, hds = [], []
    for image, mask in cases:
        pred = predict(model, image)
        gt = SegMask(mask)
        for structure in ("PS", "FH"):
            dscs.append(dsc(pred, gt, structure))
            try:
                hds.append(hausdorff(pred, gt, structure))
            except EmptyRegionError:
                hds.append(WORST_DISTANCE)
    return float(np.mean(dscs)), float(np.mean(hds))


# -- training loop ------------------------------------------------------------------------


@dataclass
class TrainResult:
    losses: list[float]
    epoch_records: list[dict]
    best_val_dsc: float
    best_path: Path | None
    last_path: Path | None


def train(model: BraUNet, train_cases, val_cases, cfg: TrainConfig,
          out_dir=None) -> TrainResult:
    """Adam epochs of augment -> forward -> loss -> backward -> step.

    ``train_cases`` / ``val_cases`` are lists of (image [C, H, W], mask [H, W])
    arrays. Writes ``last.ckpt``, best-validation ``best.ckpt``, and an
    append-only ``metrics.jsonl`` when ``out_dir`` is given. Fully
    deterministic for a fixed config.
    """
    cfg.validate()
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "metrics.jsonl" if out_dir is not None else None

    optimizer = Adam(model.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    order_rng = np.random.default_rng([cfg.seed, 101])
    n = len(train_cases)

    losses: list[float] = []
    records: list[dict] = []
    best_dsc = -1.0
    best_path = out_dir / "best.ckpt" if out_dir is not None else None
    last_path = out_dir / "last.ckpt" if out_dir is not None else None
    step = 0

    for epoch in range(cfg.epochs):
        order = order_rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, cfg.batch_size):
            batch_idx = order[start : start + cfg.batch_size]
            images, masks = [], []
            for idx in batch_idx:
                image, mask = train_cases[int(idx)]
                if cfg.flip_prob > 0 or cfg.rot_degrees > 0:
                    sample_rng = np.random.default_rng([cfg.seed, 202, epoch, int(idx)])
                    image, mask = augment(image, mask, cfg.flip_prob, cfg.rot_degrees, sample_rng)
                images.append(image)
                masks.append(mask)

            logits = model.forward(Tensor(np.stack(images)), training=True)
            loss = seg_loss(logits, np.stack(masks), cfg.w_ce, cfg.w_dice)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(step, cfg.learning_rate)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(value)
            epoch_losses.append(value)
            step += 1

        if val_cases and ((epoch + 1) % cfg.val_interval == 0 or epoch == cfg.epochs - 1):
            val_dsc, val_hd = validate_cases(model, val_cases)
            record = {
                "epoch": epoch,
                "steps": step,
                "mean_loss": float(np.mean(epoch_losses)),
                "val_dsc": val_dsc,
                "val_hd": val_hd,
            }
            records.append(record)
            if log_path is not None:
                with log_path.open("a") as fh:
                    fh.write(json.dumps(record) + "\n")
            if val_dsc > best_dsc:
                best_dsc = val_dsc
                if best_path is not None:
                    model.save(best_path)

    if last_path is not None:
        model.save(last_path)
    return TrainResult(losses, records, best_dsc, best_path, last_path)


def windowed_means(values, width: int) -> list[float]:
    """Means over consecutive non-overlapping windows (truncated tail dropped)."""
    full = len(values) // width
    return [float(np.mean(values[i * width : (i + 1) * width])) for i in range(full)]
