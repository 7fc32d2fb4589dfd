"""Finite-difference verification of every analytic loss gradient.

Each trial builds a random small instance of a loss directly on feature-level
tensors, computes the analytic gradient with the tape and compares it per
element against central finite differences.  Trials run in float64 so the
comparison measures the backward rules, not float32 rounding.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import crossmodal, tensor as T
from .prompts import contrastive_alignment_loss
from .tensor import Tape, Tensor, finite_difference_grad


@dataclass
class GradCheckReport:
    name: str
    trials: int
    max_abs_err: float
    max_rel_err: float
    failures: int

    @property
    def passed(self) -> bool:
        return self.failures == 0


def _compare(analytic: np.ndarray, fd: np.ndarray, rtol: float, atol: float):
    err = np.abs(analytic.astype(np.float64) - fd.astype(np.float64))
    tol = np.maximum(rtol * np.abs(fd), atol)
    bad = int((err > tol).sum())
    denom = np.maximum(np.abs(fd), atol)
    return float(err.max(initial=0.0)), float((err / denom).max(initial=0.0)), bad


def _check_inputs(build: Callable[[], tuple[list[Tensor], Callable]],
                  rtol: float, atol: float, h: float):
    """One trial: analytic grads for every input vs finite differences."""
    inputs, f = build()
    with Tape() as tape:
        tape.backward(f())
    worst = (0.0, 0.0, 0)
    for x in inputs:
        fd = finite_difference_grad(lambda _ : f(), x, h=h)
        a, r, bad = _compare(x.grad, fd.data, rtol, atol)
        worst = (max(worst[0], a), max(worst[1], r), worst[2] + bad)
        x.zero_grad()
    return worst


def _rand(rng, shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)


def _unit_rows(rng, shape) -> np.ndarray:
    x = rng.standard_normal(shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _make_trial(name: str, rng: np.random.Generator):
    C = int(rng.integers(2, 6))
    D = int(rng.integers(4, 17))
    B = int(rng.integers(2, 5))
    N = int(rng.integers(3, 10))
    k = int(rng.integers(1, N + 1))
    tau = float(rng.uniform(0.05, 0.5))
    labels = rng.integers(0, C, size=B)

    if name in ("l_ta", "l_pa"):
        soft = _rand(rng, (C, D))
        hard = Tensor(rng.standard_normal((C, D)), dtype=np.float64)
        return [soft], lambda: contrastive_alignment_loss(soft, hard, tau)
    if name in ("l_v_cosine", "l_v_l1"):
        metric = name.split("_")[-1]
        z = _rand(rng, (B, D))
        protos = _unit_rows(rng, (C, D))
        from .prototypes import PrototypeTable, visual_alignment_loss
        table = PrototypeTable(Tensor(protos, dtype=np.float64), "full", 0)
        return [z], lambda: visual_alignment_loss(z, labels, table, metric)
    if name == "l_vt":
        g = _rand(rng, (B, D))
        loc = _rand(rng, (B, N, D))
        txt = _rand(rng, (C, D))

        def f():
            lg = crossmodal.logits(T.l2_normalize(g), T.l2_normalize(loc),
                                   T.l2_normalize(txt), k)
            return crossmodal.image_text_loss(lg, labels, tau)
        return [g, loc, txt], f
    if name == "l_total":
        beta = float(rng.uniform(0.0, 2.0))
        gamma = float(rng.uniform(0.0, 2.0))
        soft = _rand(rng, (C, D))
        hard = Tensor(rng.standard_normal((C, D)), dtype=np.float64)
        g = _rand(rng, (B, D))
        loc = _rand(rng, (B, N, D))
        txt = _rand(rng, (C, D))
        protos = _unit_rows(rng, (C, D))
        from .prototypes import PrototypeTable, visual_alignment_loss
        table = PrototypeTable(Tensor(protos, dtype=np.float64), "full", 0)

        def f():
            lg = crossmodal.logits(T.l2_normalize(g), T.l2_normalize(loc),
                                   T.l2_normalize(txt), k)
            l_vt = crossmodal.image_text_loss(lg, labels, tau)
            l_ta = contrastive_alignment_loss(soft, hard, tau)
            l_pa = contrastive_alignment_loss(txt, hard, tau)
            l_v = visual_alignment_loss(g, labels, table, "cosine")
            return crossmodal.total_loss(
                l_vt, T.add(l_ta, l_pa), l_v, beta, gamma)
        return [soft, g, loc, txt], f
    raise ValueError(f"unknown loss {name!r}")


LOSS_NAMES = ("l_ta", "l_pa", "l_v_cosine", "l_v_l1", "l_vt", "l_total")


def run_gradient_suite(trials: int = 100, seed: int = 0, rtol: float = 1e-3,
                       atol: float = 1e-5, h: float = 1e-5,
                       losses=LOSS_NAMES) -> list[GradCheckReport]:
    reports = []
    for name in losses:
        rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
        max_a = max_r = 0.0
        failures = 0
        for _ in range(trials):
            a, r, bad = _check_inputs(lambda: _make_trial(name, rng), rtol, atol, h)
            max_a, max_r = max(max_a, a), max(max_r, r)
            failures += bad
        reports.append(GradCheckReport(name, trials, max_a, max_r, failures))
    return reports
