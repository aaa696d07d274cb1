"""Central finite-difference checks against tape gradients."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def _rel_err(a: np.ndarray, b: np.ndarray, floor: float) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def numeric_grad(f: Callable[[], Tensor], x: Tensor, eps: float = 1e-5,
                 extrapolate: bool = False) -> np.ndarray:
    """Central differences; ``extrapolate`` adds one Richardson step, ``(4 D(eps/2) - D(eps)) / 3``.

    The extrapolated form has O(eps^4) truncation error, so it tolerates a
    larger step and with it much less cancellation error on smooth functions.
    """
    if extrapolate:
        return (4.0 * numeric_grad(f, x, eps / 2) - numeric_grad(f, x, eps)) / 3.0
    g = np.zeros_like(x.data)
    flat, gflat = x.data.reshape(-1), g.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * eps)
    return g


def finite_diff_check(f: Callable, x: Tensor, eps: float = 1e-5, floor: float = 1e-6) -> float:
    """Max relative error between tape and central-difference gradients of ``f(x)``.

    The relative error of a coordinate is ``|a - b| / max(|a|, |b|, floor)``;
    ``floor`` keeps exactly-zero gradients from dividing by zero.
    """
    return check_tensors(lambda: f(x), [x], eps=eps, floor=floor)[0]


def check_tensors(f: Callable[[], Tensor], tensors: Sequence[Tensor],
                  eps: float = 1e-5, floor: float = 1e-6, extrapolate: bool = False) -> list:
    """Per-tensor max relative error for a closure ``f`` over ``tensors``."""
    flags = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    f().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    errs = [_rel_err(a, numeric_grad(f, t, eps, extrapolate), floor) for t, a in zip(tensors, analytic)]
    for t, flag in zip(tensors, flags):
        t.requires_grad = flag
        t.grad = None
    return errs


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float
    seconds: float

    @property
    def ok(self) -> bool:
        return self.error <= self.tol


def _layer_cases(r: np.random.Generator):
    """Yield ``(name, closure, tensors)`` for every differentiable op."""
    from . import ops
    from .attention import EcmsaConfig, EseParams, ecmsa_forward, ese_forward, init_params
    from .rng import Rng

    def t(*shape, lo=None):
        v = r.normal(size=shape) if lo is None else r.uniform(lo, 1 - lo, shape)
        return Tensor(v, requires_grad=True)

    def weighted(y):
        # random projection so that every output coordinate matters
        w = Tensor(r.normal(size=y.shape))
        return lambda out: ops.sum(ops.mul(out, w))

    a, b = t(5, 7), t(7, 3)
    proj = weighted(ops.matmul(a, b))
    yield "matmul", lambda: proj(ops.matmul(a, b)), [a, b]

    x, w, bias = t(2, 6, 6), t(3, 2, 3, 3), t(3)
    proj_c = weighted(ops.conv2d(x, w, bias))
    yield "conv2d", lambda: proj_c(ops.conv2d(x, w, bias)), [x, w, bias]

    xb = t(2, 2, 6, 6)
    proj_b = weighted(ops.conv2d(xb, w, bias))
    yield "conv2d/batched", lambda: proj_b(ops.conv2d(xb, w, bias)), [xb, w, bias]

    s = t(4, 5)
    proj_s = weighted(s)
    yield "softmax_rows", lambda: proj_s(ops.softmax_rows(s)), [s]

    u, v = t(2, 3, 3), t(2, 3, 3)
    proj_e = weighted(u)
    yield "add", lambda: proj_e(ops.add(u, v)), [u, v]
    yield "sub", lambda: proj_e(ops.sub(u, v)), [u, v]
    yield "mul", lambda: proj_e(ops.mul(u, v)), [u, v]
    yield "scale", lambda: proj_e(ops.scale(u, -1.7)), [u]
    yield "relu", lambda: proj_e(ops.relu(u)), [u]
    yield "sigmoid", lambda: proj_e(ops.sigmoid(u)), [u]
    cv = t(2)
    yield "mul_channel", lambda: proj_e(ops.mul_channel(u, cv)), [u, cv]
    bv = t(3)
    yield "add_bias", lambda: proj_e(ops.add_bias(u, bv)), [u, bv]

    g = t(3, 4, 4)
    proj_g = weighted(ops.pool_avg_global(g))
    yield "pool_avg_global", lambda: proj_g(ops.pool_avg_global(g)), [g]
    proj_m = weighted(ops.pool_max_2x2(g))
    yield "pool_max_2x2", lambda: proj_m(ops.pool_max_2x2(g)), [g]
    proj_u = weighted(ops.upsample_nearest_2x(g))
    yield "upsample_nearest_2x", lambda: proj_u(ops.upsample_nearest_2x(g)), [g]
    g2 = t(2, 4, 4)
    proj_cat = weighted(ops.concat([g, g2], axis=-3))
    yield "concat", lambda: proj_cat(ops.concat([g, g2], axis=-3)), [g, g2]
    proj_t = weighted(ops.transpose(ops.reshape(g, (3, 16))))
    yield "reshape/transpose", lambda: proj_t(ops.transpose(ops.reshape(g, (3, 16)))), [g]

    lx, lw, lb = t(6), t(4, 6), t(4)
    proj_l = weighted(ops.linear(lx, lw, lb))
    yield "linear", lambda: proj_l(ops.linear(lx, lw, lb)), [lx, lw, lb]

    pred = t(3, 5, lo=0.05)
    target = Tensor((r.random((3, 5)) < 0.5).astype(np.float64))
    yield "bce_loss", lambda: ops.bce_loss(pred, target), [pred]

    ex = t(3, 4, 4)
    ep = EseParams(t(3, 3), t(3))
    proj_x = weighted(ex)
    yield "ese", lambda: proj_x(ese_forward(ex, ep)), [ex, ep.w, ep.b]

    vin, f2 = t(8, 4, 4), t(16)
    p = init_params(8, 16, Rng(int(r.integers(1 << 62))))
    for name, tensor in p.named().items():
        tensor.data = tensor.data + 0.1 * r.normal(size=tensor.shape)  # move biases off zero
    proj_a = weighted(vin)
    yield ("ecmsa", lambda: proj_a(ecmsa_forward(vin, f2, p, EcmsaConfig())[0]),
           [vin, f2, *p.named().values()])


# the composite block is held to the looser bound and, being smooth, is
# differenced with the extrapolated oracle at a larger step
COMPOSITE = {"ecmsa": {"tol": 1e-4, "eps": 1e-3, "extrapolate": True}}


def layer_suite(seeds=(0, 1, 2), tol: float = 1e-5) -> list:
    out = []
    for seed in seeds:
        r = np.random.default_rng(seed)
        for name, f, tensors in _layer_cases(r):
            opts = dict(COMPOSITE.get(name, {"tol": tol}))
            bound = opts.pop("tol")
            t0 = time.perf_counter()
            err = max(check_tensors(f, tensors, **opts))
            out.append(CheckResult(f"{name}[seed={seed}]", err, bound, time.perf_counter() - t0))
    return out


def network_fixture(seed: int = 0, arch: str = "unet", attach: str = "in:1", depth: int = 2,
                    base: int = 4, size: int = 16, d_text: int = 8):
    """``(net, loss)`` for a seeded random image, text vector and target.

    The loss is the mask BCE plus half of each side-output BCE.
    """
    from . import ops
    from .nets import NetConfig, build
    from .rng import Rng

    r = np.random.default_rng(seed)
    net = build(NetConfig(arch=arch, depth=depth, base_channels=base, input_size=size, d_text=d_text),
                attach, Rng(seed))
    # zero-initialized biases can leave pre-activations exactly on a ReLU
    # kink, where the one-sided derivatives differ; nudge them off it
    for t in net.params.values():
        if t.ndim == 1:
            t.data = t.data + 0.1 * r.normal(size=t.shape)
    image = Tensor(r.random((3, size, size)))
    f2 = Tensor(r.normal(size=d_text)) if net.blocks else None
    target = Tensor((r.random((1, size, size)) < 0.3).astype(np.float64))

    def loss():
        out = net.forward(image, f2)
        total = ops.bce_loss(out.mask, target)
        for aux in out.aux_masks:
            total = ops.add(total, ops.scale(ops.bce_loss(aux, target), 0.5))
        return total

    return net, loss


def network_check(seed: int = 0, arch: str = "unet", attach: str = "in:1", depth: int = 2,
                  base: int = 4, size: int = 16, d_text: int = 8, tol: float = 1e-4) -> CheckResult:
    """End-to-end BCE gradient check over every network parameter."""
    net, loss = network_fixture(seed, arch, attach, depth, base, size, d_text)
    t0 = time.perf_counter()
    err = max(check_tensors(loss, list(net.params.values())))
    return CheckResult(f"network[{arch}|{attach or 'none'}|depth={depth}|base={base}]",
                       err, tol, time.perf_counter() - t0)


def full_suite(seed: int = 0) -> list:
    """Every layer on three seeds plus the depth-2, base-4, ``in:1`` network."""
    return layer_suite((seed, seed + 1, seed + 2)) + [network_check(seed)]
