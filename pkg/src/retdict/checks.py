"""Self-check suites run by ``retdict check``.

Each suite yields :class:`CheckResult` items, one per seeded instance or
property, so callers can stop at the first failure.
"""

from typing import NamedTuple

import numpy as np

from .layer import (
    RDParams,
    finite_difference_gradients,
    gradient_relative_errors,
    rd_backward,
    rd_forward,
)
from .normalization import Dictionary, PonoParams, pono, weight_normalize
from .retriever import RetrieverWeights, fuse_weights, fused_retriever, retriever_core
from .harness import taylor_update_check


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str


def random_params(f, n, k, seed, lam=0.8):
    """Random layer with non-trivial PONO affine, for gradient checks."""
    rng = np.random.default_rng(seed)
    retriever = RetrieverWeights(rng.standard_normal((n, f)), rng.standard_normal((n, k, k)))
    pono_params = PonoParams(1.0 + 0.5 * rng.standard_normal(n), 0.5 * rng.standard_normal(n))
    return RDParams(retriever, pono_params, Dictionary(rng.standard_normal((n, f))), lam)


def check_fuse(seeds=20, tol=1e-6):
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        f = int(rng.integers(1, 33))
        n = int(rng.integers(1, 17))
        k = int(rng.choice([1, 3, 5]))
        h, w = (int(v) for v in rng.integers(1, 17, size=2))
        wts = RetrieverWeights(rng.standard_normal((n, f)), rng.standard_normal((n, k, k)))
        x = rng.standard_normal((f, h, w))
        diff = float(np.abs(retriever_core(x, wts) - fused_retriever(x, fuse_weights(wts))).max())
        yield CheckResult(
            f"fuse seed={seed} f={f} N={n} k={k} {h}x{w}", diff < tol, f"max|split-fused|={diff:.3e}"
        )


def check_grads(seeds=20, tol=1e-4, step=1e-5, f=6, n=4, k=3, size=5):
    for seed in range(seeds):
        params = random_params(f, n, k, seed)
        rng = np.random.default_rng(10_000 + seed)
        x = rng.standard_normal((f, size, size))
        weights = rng.standard_normal((f, size, size))
        _, cache = rd_forward(x, params)
        analytic = rd_backward(weights, cache, params)
        numeric = finite_difference_gradients(x, params, lambda z: float((z * weights).sum()), step)
        errs = gradient_relative_errors(analytic, numeric)
        worst = max(errs, key=errs.get)
        yield CheckResult(
            f"grads seed={seed}",
            all(e < tol for e in errs.values()),
            ", ".join(f"{name}={e:.2e}" for name, e in errs.items()) + f" (worst {worst})",
        )


def check_taylor(seeds=5, tol=0.05, etas=(1e-3, 2e-3, 4e-3, 6e-3, 8e-3, 1e-2)):
    for seed in range(seeds):
        params = random_params(6, 4, 3, seed)
        rng = np.random.default_rng(20_000 + seed)
        x = rng.standard_normal((6, 5, 5))
        _, cache = rd_forward(x, params)
        g = rd_backward(rng.standard_normal(x.shape), cache, params)
        rows = taylor_update_check(params.retriever, g.d_pointwise, g.d_depthwise, etas)
        ratios = np.array([disc / eta**2 for eta, disc in rows])
        spread = float(ratios.max() / ratios.min() - 1.0) if ratios.min() > 0 else np.inf
        yield CheckResult(
            f"taylor quadratic law seed={seed}", spread < tol,
            f"discrepancy/eta^2 in [{ratios.min():.6e}, {ratios.max():.6e}], spread={spread:.2e}",
        )
        zero_pw = taylor_update_check(params.retriever, np.zeros_like(g.d_pointwise), g.d_depthwise, etas)
        zero_dw = taylor_update_check(params.retriever, g.d_pointwise, np.zeros_like(g.d_depthwise), etas)
        worst = max(d for _, d in zero_pw + zero_dw)
        yield CheckResult(f"taylor one-sided seed={seed}", worst == 0.0, f"max discrepancy={worst!r}")


def check_pono(seeds=10, tol=1e-9):
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 17))
        c = 3.0 * rng.standard_normal((n, 6, 7)) + rng.standard_normal()
        p = PonoParams.identity(n)
        out = pono(c, p)
        mean_err = float(np.abs(out.mean(axis=0)).max())
        var = c.var(axis=0)
        ratio_err = float(np.abs(out.var(axis=0) - var / (var + p.epsilon)).max())
        yield CheckResult(
            f"pono moments seed={seed}", mean_err < tol and ratio_err < tol,
            f"max|mean|={mean_err:.2e}, max|var - s/(s+eps)|={ratio_err:.2e}",
        )
        shift = rng.standard_normal((1, 6, 7))
        shift_err = float(np.abs(pono(c + shift, p) - out).max())
        yield CheckResult(f"pono shift invariance seed={seed}", shift_err < tol, f"{shift_err:.2e}")

        d = Dictionary(rng.standard_normal((n, 5)))
        once = weight_normalize(d).data
        twice = weight_normalize(weight_normalize(d)).data
        scaled = weight_normalize(Dictionary(d.data * rng.uniform(0.1, 10.0))).data
        idem = float(np.abs(twice - once).max())
        scale = float(np.abs(scaled - once).max())
        yield CheckResult(
            f"wn idempotence/scale seed={seed}", idem < tol and scale < tol,
            f"idempotence={idem:.2e}, scale={scale:.2e}",
        )

        params = random_params(5, n, 3, seed, lam=1.0)
        x = rng.standard_normal((5, 4, 4))
        z, _ = rd_forward(x, params)
        yield CheckResult(
            f"lambda=1 identity seed={seed}", z.tobytes() == x.tobytes(), "bitwise comparison"
        )


SUITES = {
    "fuse": check_fuse,
    "grads": check_grads,
    "taylor": check_taylor,
    "pono": check_pono,
}
