"""Timing comparison of the numba and numpy kernel backends.

Both lanes share the same BLAS matmul for the GEMM core; the backends
differ in the data-movement loops (padding, column gather/scatter, max
pooling), which is where the jit pays off. Outputs are also compared
for agreement so the speed numbers describe identical computations.
"""

import time
from typing import Dict

import numpy as np

from . import kernels


def _best_of(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _cases(batch: int, size: int):
    rng = np.random.default_rng(7)
    h2, h4 = size // 2, size // 4
    shapes = [
        ("conv_16x16_full", (batch, 16, size, size), (16, 16, 3, 3)),
        ("conv_32x32_half", (batch, 32, h2, h2), (32, 32, 3, 3)),
        ("conv_64x64_quarter", (batch, 64, h4, h4), (64, 64, 3, 3)),
        ("conv_head_48to16", (batch, 48, size, size), (16, 48, 3, 3)),
    ]
    for name, xs, ws in shapes:
        yield name, rng.standard_normal(xs), rng.standard_normal(ws)


def run_bench(batch: int = 8, size: int = 64, repeats: int = 3) -> Dict:
    """Time conv forward/backward and maxpool on both backends."""
    available = ["numpy"] + (["numba"] if kernels.numba_available() else [])
    original = kernels.backend_name()
    results: Dict[str, Dict[str, float]] = {b: {} for b in available}
    reference: Dict[str, np.ndarray] = {}
    agree = True
    try:
        for backend in available:
            kernels.set_backend(backend)
            for name, x, w in _cases(batch, size):
                out = kernels.conv_forward(x, w, (1, 1))  # warm the jit before timing
                g = np.ones_like(out)
                results[backend][f"{name}_fwd"] = _best_of(
                    lambda: kernels.conv_forward(x, w, (1, 1)), repeats)
                results[backend][f"{name}_bwd"] = _best_of(
                    lambda: kernels.conv_backward(x, w, g, (1, 1), True, True), repeats)
                if name in reference:
                    agree = agree and np.allclose(out, reference[name], atol=1e-10)
                else:
                    reference[name] = out
            xp = np.random.default_rng(3).standard_normal((batch, 16, size, size))
            kernels.maxpool2_forward(xp)
            results[backend]["maxpool_fwd"] = _best_of(
                lambda: kernels.maxpool2_forward(xp), repeats)
    finally:
        kernels.set_backend(original)

    summary: Dict[str, float] = {}
    if "numba" in results:
        for case, t_np in results["numpy"].items():
            t_nb = results["numba"][case]
            summary[case] = t_np / t_nb if t_nb > 0 else float("inf")
    return {
        "backends": available,
        "outputs_agree": bool(agree),
        "seconds": results,
        "numpy_over_numba_speedup": summary,
    }
