"""Central finite-difference verification of analytic gradients.

The checker perturbs selected entries of each input tensor (all entries by
default, or a seeded sample for large tensors), re-evaluates the loss under
``no_grad``, and compares the two-sided difference quotient against the
gradient produced by the tape. Checks run in float64; finite differences are
unreliable in float32.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, no_grad

DEFAULT_STEP = 1e-5
ABS_FLOOR = 1e-8


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_error: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.max_error < self.tolerance


def scaled_error(analytic: float, numeric: float, rtol: float) -> float:
    """|a - n| scaled so values below ``rtol`` pass; tolerant of tiny gradients."""
    return abs(analytic - numeric) / (ABS_FLOOR / rtol + max(abs(analytic), abs(numeric)))


def _entry_indices(shape, sample: int | None, rng: np.random.Generator):
    total = int(np.prod(shape)) if shape else 1
    if sample is None or sample >= total:
        flat = np.arange(total)
    else:
        flat = rng.choice(total, size=sample, replace=False)
        flat.sort()
    return [np.unravel_index(i, shape) if shape else () for i in flat]


def check_gradients(
    make_loss,
    tensors: list[Tensor],
    rtol: float = 1e-4,
    step: float = DEFAULT_STEP,
    sample: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max scaled error between tape gradients and central finite differences.

    ``make_loss`` must rebuild the scalar loss from the current ``.data`` of
    ``tensors`` on every call. With ``sample`` set, that many entries per
    tensor are checked (seeded by ``rng``); otherwise every entry is.
    """
    for t in tensors:
        if t.data.dtype != np.float64:
            raise ValueError("gradient checks require float64 tensors")
        t.zero_grad()
    loss = make_loss()
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    rng = rng or np.random.default_rng(0)
    worst = 0.0
    with no_grad():
        for t, grad in zip(tensors, analytic):
            for idx in _entry_indices(t.data.shape, sample, rng):
                orig = t.data[idx]
                t.data[idx] = orig + step
                f_plus = make_loss().item()
                t.data[idx] = orig - step
                f_minus = make_loss().item()
                t.data[idx] = orig
                numeric = (f_plus - f_minus) / (2.0 * step)
                worst = max(worst, scaled_error(float(grad[idx]), numeric, rtol))
    return worst


def check_op(name, make_loss, tensors, rtol=1e-4, **kwargs) -> CheckResult:
    return CheckResult(name, check_gradients(make_loss, tensors, rtol=rtol, **kwargs), rtol)


# -- suites -----------------------------------------------------------------------
#
# Shared by the test suite and the ``gradcheck`` CLI command. Primitive and
# block checks cover every entry of every tensor; the full-model check samples
# a few entries per parameter tensor (every tensor is still touched) to stay
# inside a desk-scale time budget.


def _weighted(out: Tensor, rng: np.random.Generator) -> Tensor:
    """Scalar loss from a fixed random projection of ``out``."""
    weights = Tensor(rng.normal(size=out.shape))
    return (out * weights).sum()


def run_primitive_suite(seed: int = 0) -> list[CheckResult]:
    """Finite-difference checks for every differentiable primitive."""
    from . import nn
    from .autodiff import concatenate, exp, gather_rows, log, log_softmax, matmul, softmax

    rng = np.random.default_rng(seed)

    def rand(*shape):
        return Tensor(rng.normal(size=shape), dtype=np.float64, requires_grad=True)

    results = []

    a, b = rand(4, 5), rand(5, 3)
    results.append(check_op("matmul", lambda: _weighted(matmul(a, b), np.random.default_rng(1)), [a, b]))

    ab1, ab2 = rand(3, 1, 4), rand(2, 4)
    results.append(check_op(
        "add_mul_broadcast",
        lambda: _weighted(ab1 * ab2 + ab1, np.random.default_rng(2)),
        [ab1, ab2],
    ))

    dv1, dv2 = rand(3, 4), rand(3, 4)
    dv2.data += 3.0  # keep the denominator away from zero
    results.append(check_op("div_exp_log", lambda: _weighted(exp(dv1) / dv2 + log(dv2), np.random.default_rng(3)), [dv1, dv2]))

    sm = rand(3, 6)
    results.append(check_op("softmax", lambda: _weighted(softmax(sm, axis=-1), np.random.default_rng(4)), [sm]))
    results.append(check_op("log_softmax", lambda: _weighted(log_softmax(sm, axis=-1), np.random.default_rng(5)), [sm]))

    ga = rand(6, 4)
    results.append(check_op(
        "gather_rows",
        lambda: _weighted(gather_rows(ga, [5, 1, 1]), np.random.default_rng(6)),
        [ga],
    ))

    sh = rand(2, 3, 4)
    results.append(check_op(
        "reshape_transpose_slice",
        lambda: _weighted(sh.transpose((2, 0, 1)).reshape(4, 6)[1:3, ::2], np.random.default_rng(7)),
        [sh],
    ))

    c1, c2 = rand(2, 3), rand(2, 2)
    results.append(check_op(
        "concatenate",
        lambda: _weighted(concatenate([c1, c2], axis=1), np.random.default_rng(8)),
        [c1, c2],
    ))

    mr = rand(3, 4, 5)
    results.append(check_op(
        "mean_sum",
        lambda: _weighted(mr.mean(axis=1) + mr.sum(axis=(0, 2), keepdims=True).reshape(4).mean(), np.random.default_rng(9)),
        [mr],
    ))

    gx = rand(3, 7)
    results.append(check_op("gelu", lambda: _weighted(nn.gelu(gx), np.random.default_rng(10)), [gx]))

    lin = nn.Linear(5, 3, rng=rng, dtype=np.float64)
    lx = rand(4, 5)
    results.append(check_op(
        "linear",
        lambda: _weighted(lin.forward(lx), np.random.default_rng(11)),
        [lx, lin.weight, lin.bias],
    ))

    conv = nn.Conv2d(3, 5, 3, stride=2, padding=1, rng=rng, dtype=np.float64)
    cx = rand(2, 3, 8, 8)
    results.append(check_op(
        "conv2d_stride2",
        lambda: _weighted(conv.forward(cx), np.random.default_rng(12)),
        [cx, conv.weight, conv.bias],
    ))

    dconv = nn.Conv2d(4, 4, 5, padding=2, groups=4, rng=rng, dtype=np.float64)
    dx = rand(2, 4, 6, 6)
    results.append(check_op(
        "conv2d_depthwise",
        lambda: _weighted(dconv.forward(dx), np.random.default_rng(13)),
        [dx, dconv.weight, dconv.bias],
    ))

    ln = nn.LayerNorm(6, dtype=np.float64)
    lnx = rand(3, 4, 6)
    results.append(check_op(
        "layernorm",
        lambda: _weighted(ln.forward(lnx), np.random.default_rng(14)),
        [lnx, ln.scale, ln.shift],
    ))

    bn = nn.BatchNorm2d(3, dtype=np.float64)
    bx = rand(2, 3, 4, 4)
    results.append(check_op(
        "batchnorm_train",
        lambda: _weighted(bn.forward(bx, training=True, update_stats=False), np.random.default_rng(15)),
        [bx, bn.scale, bn.shift],
    ))
    bn_eval = nn.BatchNorm2d(3, dtype=np.float64)
    bn_eval.running_mean[...] = rng.normal(size=3)
    bn_eval.running_var[...] = 1.0 + rng.random(3)
    results.append(check_op(
        "batchnorm_eval",
        lambda: _weighted(bn_eval.forward(bx, training=False), np.random.default_rng(16)),
        [bx, bn_eval.scale, bn_eval.shift],
    ))

    mlp = nn.Mlp(4, ratio=3, rng=rng, dtype=np.float64)
    mx = rand(5, 4)
    results.append(check_op(
        "mlp",
        lambda: _weighted(mlp.forward(mx), np.random.default_rng(17)),
        [mx, mlp.fc1.weight, mlp.fc1.bias, mlp.fc2.weight, mlp.fc2.bias],
    ))

    return results


def run_block_suite(seed: int = 0) -> list[CheckResult]:
    """Every parameter of one full residual block at h=w=8, c=4."""
    from .attention import BraConfig
    from .model import BiformerBlock

    rng = np.random.default_rng(seed)
    block = BiformerBlock(4, BraConfig(region_grid=2, topk=2, heads=2),
                          mlp_ratio=3, rng=rng, dtype=np.float64)
    x = Tensor(rng.normal(size=(1, 8, 8, 4)), dtype=np.float64, requires_grad=True)
    tensors = [x] + block.parameters()
    result = check_op(
        "biformer_block",
        lambda: _weighted(block.forward(x), np.random.default_rng(99)),
        tensors,
    )
    return [result]


def run_model_suite(seed: int = 0, entries_per_tensor: int = 3) -> list[CheckResult]:
    """Sampled-entry check of the full toy network, every parameter tensor covered."""
    from .model import BraUNet, toy_config

    model = BraUNet(toy_config(), seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 7)
    x = Tensor(rng.normal(size=(1, 1, 64, 64)), dtype=np.float64, requires_grad=True)
    tensors = [x] + model.parameters()
    result = check_op(
        "toy_model",
        lambda: _weighted(model.forward(x, training=False), np.random.default_rng(1234)),
        tensors,
        rtol=1e-3,
        sample=entries_per_tensor,
        rng=np.random.default_rng(seed + 11),
    )
    return [result]
