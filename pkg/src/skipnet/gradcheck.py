"""Finite-difference gradient suites for ops, blocks, and full models.

Every suite compares reverse-mode gradients against central differences
(eps 1e-5) and reports the max relative error; the CLI renders one
pass/fail line per check. Random inputs keep clear of the relu/hardtanh
kinks, where finite differences are meaningless.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .blocks import BatchNorm1d, BlockConfig, ConnectivityKind, build_block
from .ctc import ctc_loss, ctc_loss_op
from .model import ModelConfig, build_model
from .tensor import Tensor, grad_check

OP_LIMIT = 1e-4
CTC_LIMIT = 1e-5
EPS = 1e-5


@dataclass
class CheckResult:
    name: str
    max_err: float
    limit: float
    elapsed_s: float

    @property
    def ok(self) -> bool:
        return self.max_err < self.limit

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return (f"[{status}] {self.name}: max rel err {self.max_err:.3e} "
                f"(limit {self.limit:.0e}, {self.elapsed_s:.2f}s)")


def _timed(name: str, limit: float, fn) -> CheckResult:
    start = time.monotonic()
    err = fn()
    return CheckResult(name, err, limit, time.monotonic() - start)


def _rand(shape, seed, scale=1.0, rng=None):
    rng = rng or np.random.default_rng(seed)
    return rng.normal(size=shape) * scale


def _away_from_kinks(values: np.ndarray, margin: float = 10 * EPS) -> np.ndarray:
    """Nudge entries that sit within ``margin`` of the relu/hardtanh kinks."""
    out = values.copy()
    for kink in (-1.0, 0.0, 1.0):
        near = np.abs(out - kink) < margin
        out[near] = kink + 0.5
    return out


def check_ops(seeds=range(5)) -> list[CheckResult]:
    results = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        x_np = _away_from_kinks(rng.normal(size=(8, 32)))

        def sq(t):
            return T.sum_all(T.mul(t, t))

        other = Tensor(_away_from_kinks(rng.normal(size=(8, 32))))
        gate_row = Tensor(rng.normal(size=(1, 32)))
        cases = {
            "relu": lambda t: sq(T.relu(t)),
            "sigmoid": lambda t: sq(T.sigmoid(t)),
            "hardtanh": lambda t: sq(T.hardtanh(t)),
            "add": lambda t: sq(T.add(t, other)),
            "mul": lambda t: sq(T.mul(t, other)),
            "mul_broadcast": lambda t: sq(T.mul(t, gate_row)),
            "scale_shift": lambda t: sq(T.shift(T.scale(t, 1.3), 0.2)),
            "concat_channels": lambda t: sq(T.concat_channels([t, other])),
            "log_softmax": lambda t: sq(T.log_softmax(t)),
            "mean_over_time": lambda t: sq(T.mean_over_time(t)),
            "sum": T.sum_all,
        }
        for name, fn in cases.items():
            x = Tensor(x_np.copy(), requires_grad=True)
            results.append(_timed(f"op/{name}[seed {seed}]", OP_LIMIT,
                                  lambda f=fn, xx=x: grad_check(f, xx, eps=EPS)))

        # conv1d and affine and batchnorm over all their tensor arguments
        w = Tensor(rng.normal(size=(4, 8, 5)), requires_grad=True)
        b = Tensor(rng.normal(size=4), requires_grad=True)
        x = Tensor(x_np.copy(), requires_grad=True)

        def conv_loss(_):
            return sq(T.conv1d(x, w, b, stride=2, padding=2))

        for tag, var in (("x", x), ("w", w), ("b", b)):
            results.append(_timed(f"op/conv1d.{tag}[seed {seed}]", OP_LIMIT,
                                  lambda v=var: grad_check(conv_loss, v, eps=EPS)))

        aw = Tensor(rng.normal(size=(3, 8)), requires_grad=True)
        ab = Tensor(rng.normal(size=3), requires_grad=True)

        def affine_loss(_):
            return sq(T.affine(x, aw, ab))

        for tag, var in (("x", x), ("w", aw), ("b", ab)):
            results.append(_timed(f"op/affine.{tag}[seed {seed}]", OP_LIMIT,
                                  lambda v=var: grad_check(affine_loss, v, eps=EPS)))

        gamma = Tensor(rng.normal(size=8) + 2.0, requires_grad=True)
        beta = Tensor(rng.normal(size=8), requires_grad=True)
        stats = T.RunningStats.for_channels(8)

        def bn_train(_):
            return sq(T.batchnorm1d(x, gamma, beta, None, training=True))

        def bn_eval(_):
            return sq(T.batchnorm1d(x, gamma, beta, stats, training=False))

        for tag, var in (("x", x), ("gamma", gamma), ("beta", beta)):
            results.append(_timed(f"op/batchnorm_train.{tag}[seed {seed}]", OP_LIMIT,
                                  lambda v=var: grad_check(bn_train, v, eps=EPS)))
        results.append(_timed(f"op/batchnorm_eval.x[seed {seed}]", OP_LIMIT,
                              lambda: grad_check(bn_eval, x, eps=EPS)))
    return results


def _snapshot_stats(layer):
    return [(bn, bn.running.mean.copy(), bn.running.var.copy())
            for bn in _bns(layer)]


def _restore_stats(snap):
    for bn, mean, var in snap:
        bn.running.mean[...] = mean
        bn.running.var[...] = var


def _bns(layer):
    found = []

    def visit(l):
        if isinstance(l, BatchNorm1d):
            found.append(l)
        for _, child in l.children():
            visit(child)

    visit(layer)
    return found


def check_blocks() -> list[CheckResult]:
    """Train-mode gradients through every block variant, input and params."""
    results = []
    for kind in ConnectivityKind:
        cfg = BlockConfig(channels=4, kernel_size=3, growth_rate=2,
                          dense_block_depth=2, nonlinearity="sigmoid")
        block = build_block(kind, cfg, rng=np.random.default_rng(100))
        x = Tensor(_rand((4, 10), seed=101), requires_grad=True)

        def loss(_):
            snap = _snapshot_stats(block)
            out = block(x, training=True)
            _restore_stats(snap)
            return T.sum_all(T.mul(out, out))

        results.append(_timed(f"block/{kind.value}.x", OP_LIMIT,
                              lambda: grad_check(loss, x, eps=EPS)))
        for pname, p in list(block.named_parameters())[:4]:
            results.append(_timed(f"block/{kind.value}.{pname}", OP_LIMIT,
                                  lambda v=p: grad_check(loss, v, eps=EPS)))
    return results


def check_ctc(n_instances: int = 5) -> list[CheckResult]:
    """CTC loss gradient against finite differences on the logprobs."""
    results = []
    rng = np.random.default_rng(7)
    for i in range(n_instances):
        v, t_len = 4, 7
        raw = rng.normal(size=(v, t_len))
        lp = raw - np.log(np.exp(raw).sum(axis=0, keepdims=True))
        target = [int(x) for x in rng.integers(1, v, size=3)]

        def err():
            _, grad = ctc_loss(lp, target)
            worst = 0.0
            eps = 1e-6
            for idx in np.ndindex(v, t_len):
                hi, lo = lp.copy(), lp.copy()
                hi[idx] += eps
                lo[idx] -= eps
                num = (ctc_loss(hi, target)[0] - ctc_loss(lo, target)[0]) / (2 * eps)
                worst = max(worst, abs(grad[idx] - num) / max(1.0, abs(grad[idx])))
            return worst

        results.append(_timed(f"ctc/instance {i}", CTC_LIMIT, err))
    return results


def tiny_model_config(kind: str, nonlinearity: str = "hardtanh") -> ModelConfig:
    return ModelConfig(connectivity=kind, input_features=3, width=4, body_layers=7,
                       body_kernel=3, stride_kernel=3, stride=1, head_kernel=3,
                       alphabet_size=2, nonlinearity=nonlinearity, growth_rate=1)


def check_full_models(seed: int = 3, nonlinearity: str = "hardtanh") -> list[CheckResult]:
    """End-to-end gradient through the full tiny network plus CTC loss,
    for every connectivity kind, w.r.t. the input and every parameter."""
    results = []
    target = [1, 2]
    for kind in ConnectivityKind:
        model = build_model(tiny_model_config(kind.value, nonlinearity), seed=seed)
        x = Tensor(_rand((3, 12), seed=seed + 17), requires_grad=True)

        def loss(_):
            snap = _snapshot_stats(model)
            out = model(x, training=True)
            _restore_stats(snap)
            return ctc_loss_op(out, target)

        def worst_over_everything():
            worst = grad_check(loss, x, eps=EPS)
            for _, p in model.named_parameters():
                worst = max(worst, grad_check(loss, p, eps=EPS))
            return worst

        results.append(_timed(f"model/{kind.value}[{nonlinearity}]", OP_LIMIT,
                              worst_over_everything))
    return results


def run_all() -> list[CheckResult]:
    return check_ops() + check_blocks() + check_ctc() + check_full_models()
