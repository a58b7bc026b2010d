"""Embedded invariant suite run by ``sprmamba selfcheck``."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import functional as F
from .gradcheck import check_gradients
from .metrics import evaluate_video, phase_prf_jaccard
from .model import ModelConfig, SPRMamba
from .sampling import longrange_inverse, longrange_reorder, window_merge, window_partition
from .srtm import SRTM, SrtmConfig
from .ssm import (DiscreteSsm, SsmParams, apply_kernel, discretize_zoh, selective_scan, ssm_conv_kernel,
                  ssm_recurrence)
from .tensor import Tensor, no_grad


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _random_lti(rng: np.random.Generator, n: int) -> tuple[DiscreteSsm, np.ndarray]:
    params = SsmParams.from_diagonal(-rng.uniform(0.1, 2.0, n), rng.standard_normal(n), rng.standard_normal(n),
                                     float(rng.uniform(0.01, 0.5)))
    return discretize_zoh(params), params.c


def check_kernel_equivalence(corrupt: bool = False) -> tuple[bool, str]:
    rng = np.random.default_rng(1)
    worst = 0.0
    for n in (1, 4, 16):
        for length in (8, 64, 256):
            disc, c = _random_lti(rng, n)
            x = rng.standard_normal(length)
            kernel = ssm_conv_kernel(disc, c, length)
            if corrupt:
                kernel = kernel * 1.01
            worst = max(worst, float(np.max(np.abs(apply_kernel(kernel, x) - ssm_recurrence(disc, c, x)))))
    return worst <= 1e-5, f"max abs deviation {worst:.2e} (tol 1e-5)"


def check_selective_reduction() -> tuple[bool, str]:
    rng = np.random.default_rng(2)
    n, length = 4, 32
    disc_params = SsmParams.from_diagonal(-rng.uniform(0.1, 2.0, n), rng.standard_normal(n),
                                          rng.standard_normal(n), 0.1)
    x = rng.standard_normal(length)
    ref = ssm_recurrence(discretize_zoh(disc_params), disc_params.c, x)
    out = selective_scan(x[:, None], np.full((length, 1), 0.1), disc_params.a[None, :],
                         np.tile(disc_params.b, (length, 1)), np.tile(disc_params.c, (length, 1))).data[:, 0]
    err = float(np.max(np.abs(out - ref) / np.maximum(np.abs(ref), 1e-12)))
    return err <= 1e-6, f"max rel deviation {err:.2e} (tol 1e-6)"


def check_sampling() -> tuple[bool, str]:
    rng = np.random.default_rng(3)
    for _ in range(50):
        length, w, g = int(rng.integers(1, 300)), int(rng.integers(1, 65)), int(rng.integers(1, 65))
        frames = rng.standard_normal((length, 3))
        windows, _ = window_partition(frames, w)
        subseqs, _ = longrange_reorder(frames, g)
        if not (np.array_equal(window_merge(windows, length), frames)
                and np.array_equal(longrange_inverse(subseqs, length), frames)):
            return False, f"roundtrip failed for L={length} W={w} G={g}"
    return True, "50 random window/stride roundtrips exact"


def check_gradients_spot() -> tuple[bool, str]:
    rng = np.random.default_rng(4)
    x = Tensor(rng.standard_normal((6, 4)), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
    gamma = Tensor(rng.uniform(0.5, 1.5, 4), requires_grad=True)
    beta = Tensor(rng.standard_normal(4), requires_grad=True)
    err_ops = check_gradients(lambda: (F.gelu(F.instance_norm(x @ w, gamma, beta)) ** 2).sum(), [x, w, gamma, beta])

    block = SRTM(SrtmConfig(channels=8, state_dim=4, dropout=0.0), rng)
    block.eval()
    y = Tensor(rng.standard_normal((10, 8)), requires_grad=True)
    probe = rng.standard_normal((10, 8))
    err_srtm = check_gradients(lambda: (block(y) * probe).sum(), [y] + block.parameters()[:6], max_points=8)
    ok = err_ops <= 1e-4 and err_srtm <= 1e-3
    return ok, f"elementary ops {err_ops:.1e} (tol 1e-4), SRTM {err_srtm:.1e} (tol 1e-3)"


def check_softmax_and_metrics() -> tuple[bool, str]:
    rng = np.random.default_rng(5)
    probs = F.softmax(Tensor(rng.standard_normal((20, 8)) * 10), axis=-1).data
    if np.max(np.abs(probs.sum(axis=-1) - 1.0)) > 1e-12:
        return False, "softmax rows do not sum to 1"
    report = evaluate_video([0, 1, 1, 1], [0, 0, 1, 1])
    scores = phase_prf_jaccard([0, 1, 1, 1], [0, 0, 1, 1])
    ok = abs(report.accuracy - 75.0) < 1e-9 and abs(scores.mean("jaccard") - 175.0 / 3) < 1e-9
    return ok, f"hand fixture accuracy {report.accuracy:.2f}, jaccard {scores.mean('jaccard'):.2f}"


def check_causal_prefix() -> tuple[bool, str]:
    config = ModelConfig(input_dim=6, stage1_dim=8, refine_dim=8, layers_per_stage=2, stages=2, num_classes=3,
                         window=4, stride=4, state_dim=4, causal=True)
    model = SPRMamba(config).eval()
    rng = np.random.default_rng(6)
    x = rng.standard_normal((19, 6))
    with no_grad():
        full = model(x)[-1].probs.data
        prefix = model(x[:11])[-1].probs.data
    same = np.array_equal(full[:11], prefix)
    return same, "prefix outputs identical" if same else "prefix outputs differ"


CHECKS: dict[str, Callable[..., tuple[bool, str]]] = {
    "ssm recurrence == kernel": check_kernel_equivalence,
    "selective scan LTI reduction": check_selective_reduction,
    "sampling roundtrips": check_sampling,
    "gradient spot-checks": check_gradients_spot,
    "softmax + metrics fixture": check_softmax_and_metrics,
    "causal prefix": check_causal_prefix,
}


def run_selfcheck(corrupt_kernel: bool = False) -> list[CheckResult]:
    results = []
    for name, fn in CHECKS.items():
        start = time.perf_counter()
        try:
            passed, detail = fn(corrupt_kernel) if fn is check_kernel_equivalence else fn()
        except Exception as exc:  # a crashing check is a failed check
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(passed), detail, time.perf_counter() - start))
    return results
