"""Slow, independent reference implementations used only for verification.

These deliberately avoid the library's own kernels: dense attention is spelled
out head by head on plain ndarrays, the local-context branch goes through
scipy's correlate2d, and the distance metrics enumerate all boundary-point
pairs. They exist so the fast paths can be checked against something that
shares no code with them.
"""

import math

import numpy as np
from scipy.signal import correlate2d


def dense_attention(x: np.ndarray, wq: np.ndarray, wk: np.ndarray, wv: np.ndarray,
                    wo: np.ndarray, wo_bias: np.ndarray,
                    lce_weight: np.ndarray, lce_bias: np.ndarray,
                    heads: int) -> np.ndarray:
    """Full softmax attention over every token of a [B, H, W, C] map, plus the
    depth-wise 5x5 convolution of the value map."""
    b, h, w, c = x.shape
    d = c // heads
    tokens = x.reshape(b, h * w, c)
    q = tokens @ wq
    k = tokens @ wk
    v = tokens @ wv

    head_outputs = []
    for hd in range(heads):
        sl = slice(hd * d, (hd + 1) * d)
        logits = q[..., sl] @ k[..., sl].transpose(0, 2, 1) / math.sqrt(d)
        shifted = logits - logits.max(axis=-1, keepdims=True)
        weights = np.exp(shifted)
        weights /= weights.sum(axis=-1, keepdims=True)
        head_outputs.append(weights @ v[..., sl])
    merged = np.concatenate(head_outputs, axis=-1) @ wo + wo_bias
    merged = merged.reshape(b, h, w, c)

    value_map = v.reshape(b, h, w, c)
    local = np.zeros_like(value_map)
    for bi in range(b):
        for ci in range(c):
            local[bi, :, :, ci] = (
                correlate2d(value_map[bi, :, :, ci], lce_weight[ci, 0], mode="same")
                + lce_bias[ci]
            )
    return merged + local


def topk_reference(values: np.ndarray, k: int) -> np.ndarray:
    """Sort the whole array, keep the k best with ties to the smaller index."""
    ranked = sorted(range(len(values)), key=lambda i: (-values[i], i))
    return np.array(sorted(ranked[:k]), dtype=np.int64)


def boundary_reference(foreground: np.ndarray) -> np.ndarray:
    """Loop-based 4-adjacency boundary of a boolean mask."""
    fg = np.asarray(foreground, dtype=bool)
    rows, cols = fg.shape
    points = []
    for r in range(rows):
        for col in range(cols):
            if not fg[r, col]:
                continue
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                rr, cc = r + dr, col + dc
                if rr < 0 or rr >= rows or cc < 0 or cc >= cols or not fg[rr, cc]:
                    points.append((float(r), float(col)))
                    break
    return np.array(points, dtype=float).reshape(-1, 2)


def _all_pairs_nearest(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    diff = src[:, None, :] - dst[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=-1)).min(axis=1)


def hausdorff_reference(fg_a: np.ndarray, fg_b: np.ndarray) -> float:
    """Max over both directions of max nearest-boundary distance (all pairs)."""
    a = boundary_reference(fg_a)
    b = boundary_reference(fg_b)
    return float(max(_all_pairs_nearest(a, b).max(), _all_pairs_nearest(b, a).max()))


def asd_reference(fg_a: np.ndarray, fg_b: np.ndarray) -> float:
    """Pooled symmetric mean of nearest-boundary distances (all pairs)."""
    a = boundary_reference(fg_a)
    b = boundary_reference(fg_b)
    d_ab = _all_pairs_nearest(a, b)
    d_ba = _all_pairs_nearest(b, a)
    return float((d_ab.sum() + d_ba.sum()) / (len(d_ab) + len(d_ba)))


def dsc_reference(fg_a: np.ndarray, fg_b: np.ndarray) -> float:
    """Pixel-counting Dice computed with explicit loops."""
    a = np.asarray(fg_a, dtype=bool)
    b = np.asarray(fg_b, dtype=bool)
    inter = size_a = size_b = 0
    for r in range(a.shape[0]):
        for c in range(a.shape[1]):
            size_a += int(a[r, c])
            size_b += int(b[r, c])
            inter += int(a[r, c] and b[r, c])
    if size_a + size_b == 0:
        return 1.0
    return 2.0 * inter / (size_a + size_b)
