"""Invariant suite behind ``dmnet selfcheck``.

Every check returns a :class:`CheckResult`; the CLI prints them and exits
nonzero if any failed.  ``fault="haar-sign"`` swaps in a forward Haar
transform with flipped high-pass signs so the suite can be seen to fail.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from .blocks import (AblationToggles, FFNWeights, SMAWeights, SMTWeights, WMAWeights, WMTWeights,
                     ffn_forward, named_parameters, sma_forward, smt_forward, wma_forward, wmt_forward)
from .fourier import fft2, frequency_loss, ifft2
from .gradcheck import check_gradients, random_projection_loss
from .model import DMNetConfig, super_resolve
from .tensor import Tensor
from .training import ImagePair, TrainConfig, pixel_loss, total_loss, train_loop, wavelet_loss
from .wavelet import SubbandQuad, _analysis, dwt_haar, idwt_haar

FAULTS = ("haar-sign",)
GRAD_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<28} {self.detail}"


def _to_f64(weights, rng: np.random.Generator, spread: float = 0.3):
    # init values (std 0.02) make most paths nearly linear; widen them
    for _, t in named_parameters(weights):
        t.data = t.data.astype(np.float64) + spread * rng.standard_normal(t.shape)
    return weights


def _leaf(rng, shape) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)


# ----------------------------------------------------------------------------
# transforms


def check_dwt(fault: Optional[str] = None, trials: int = 20, seed: int = 0) -> List[CheckResult]:
    if fault == "haar-sign":
        def forward(x):
            return SubbandQuad(*(Tensor(b) for b in _analysis(x.data, -1.0)))
    else:
        forward = dwt_haar
    rng = np.random.default_rng(seed)
    worst_rt, worst_en = 0.0, 0.0
    for _ in range(trials):
        shape = (int(rng.integers(1, 3)), int(rng.integers(1, 9)),
                 2 * int(rng.integers(1, 33)), 2 * int(rng.integers(1, 33)))
        x = Tensor(rng.standard_normal(shape).astype(np.float32))
        quad = forward(x)
        back = idwt_haar(quad).data
        worst_rt = max(worst_rt, float(np.max(np.abs(back - x.data))))
        e_in = float(np.sum(x.data.astype(np.float64) ** 2))
        worst_en = max(worst_en, abs(quad.energy() - e_in) / e_in)
    return [CheckResult("dwt round-trip", worst_rt <= 1e-5, f"max abs err {worst_rt:.2e} (tol 1e-5)"),
            CheckResult("dwt energy", worst_en <= 1e-4, f"max rel err {worst_en:.2e} (tol 1e-4)")]


def check_fourier(trials: int = 10, seed: int = 0) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    worst_p, worst_rt = 0.0, 0.0
    for _ in range(trials):
        h, w = (int(v) for v in rng.integers(8, 65, 2))
        x = Tensor(rng.standard_normal((1, 3, h, w)), dtype=np.float64)
        spec = fft2(x).to_numpy()
        e_x = float(np.sum(x.data ** 2))
        e_f = float(np.sum(np.abs(spec) ** 2)) / (h * w)
        worst_p = max(worst_p, abs(e_f - e_x) / e_x)
        worst_rt = max(worst_rt, float(np.max(np.abs(ifft2(fft2(x)).data - x.data))))
    return [CheckResult("parseval", worst_p <= 1e-3, f"max rel err {worst_p:.2e} (tol 1e-3)"),
            CheckResult("ifft round-trip", worst_rt <= 1e-9, f"max abs err {worst_rt:.2e} (tol 1e-9)")]


# ----------------------------------------------------------------------------
# gradients


def _grad_result(name: str, errors: dict, tol: float) -> CheckResult:
    worst_name = max(errors, key=errors.get)
    worst = errors[worst_name]
    return CheckResult(f"grad {name}", worst < tol,
                       f"max rel err {worst:.2e} at {worst_name} (tol {tol:g})")


def _block_check(name: str, weights, run: Callable[[Tensor], Tensor], shape, seed: int,
                 tol: float) -> CheckResult:
    rng = np.random.default_rng(seed)
    _to_f64(weights, rng)
    x = _leaf(rng, shape)
    params = {"input": x, **dict(named_parameters(weights))}
    loss_of = random_projection_loss(run(x), seed=seed + 1)
    return _grad_result(name, check_gradients(lambda: loss_of(run(x)), params, seed=seed), tol)


def check_block_gradients(tol: float = GRAD_TOL, c: int = 8, hw: int = 8) -> List[CheckResult]:
    shape = (1, c, hw, hw)
    rng = np.random.default_rng(0)
    out = []
    w = SMAWeights.init(rng, c)
    out.append(_block_check("sma", w, lambda x: sma_forward(x, w), shape, 1, tol))
    for label, variant in (("wma dynamic", AblationToggles()),
                           ("wma static", AblationToggles(dynamic=False)),
                           ("wma fourier", AblationToggles(freq_domain="fourier"))):
        wm = WMAWeights.init(rng, c, variant)
        out.append(_block_check(label, wm, lambda x, wm=wm, v=variant: wma_forward(x, wm, v),
                                shape, 2, tol))
    f = FFNWeights.init(rng, c)
    out.append(_block_check("ffn", f, lambda x: ffn_forward(x, f), shape, 3, tol))
    s = SMTWeights.init(rng, c)
    out.append(_block_check("smt", s, lambda x: smt_forward(x, s), shape, 4, tol))
    t = WMTWeights.init(rng, c)
    out.append(_block_check("wmt", t, lambda x: wmt_forward(x, t), shape, 5, tol))
    return out


def check_loss_gradients(tol: float = GRAD_TOL, shape=(1, 3, 8, 8)) -> List[CheckResult]:
    # small step keeps the L1 kinks and the phase branch cut out of the stencil
    rng = np.random.default_rng(6)
    out = []
    for name, fn in (("pixel_loss", pixel_loss), ("frequency_loss", frequency_loss),
                     ("wavelet_loss", wavelet_loss), ("total_loss", total_loss)):
        sr = _leaf(rng, shape)
        hr = Tensor(rng.standard_normal(shape), dtype=np.float64)
        errors = check_gradients(lambda: fn(sr, hr), {"sr": sr}, step=1e-6, max_samples=64)
        out.append(_grad_result(name, errors, tol))
    return out


# ----------------------------------------------------------------------------
# structure


def check_residual_identity(c: int = 8, hw: int = 8) -> List[CheckResult]:
    """With output projections zeroed, both wrappers are exactly the identity."""
    rng = np.random.default_rng(7)
    x = Tensor(rng.standard_normal((1, c, hw, hw)).astype(np.float32))
    out = []
    s = SMTWeights.init(rng, c)
    t = WMTWeights.init(rng, c)
    for conv in (s.attn.proj, s.ffn.project, t.attn.expand, t.ffn.project):
        conv.weight.data[...] = 0
        conv.bias.data[...] = 0
    for name, y in (("smt", smt_forward(x, s)), ("wmt", wmt_forward(x, t))):
        err = float(np.max(np.abs(y.data - x.data)))
        out.append(CheckResult(f"residual identity {name}", err == 0.0, f"max abs diff {err:.1e}"))
    return out


def check_wma_locality(c: int = 8, h: int = 8, w: int = 12) -> CheckResult:
    rng = np.random.default_rng(8)
    weights = WMAWeights.init(rng, c)
    probe = {}
    wma_forward(Tensor(rng.standard_normal((2, c, h, w)).astype(np.float32)), weights, probe=probe)
    attn_shape = probe["attn"].shape[-2:]
    ok = attn_shape == (c, c) and probe["positions"] * 4 == h * w
    return CheckResult("wma locality", ok,
                       f"attention {attn_shape[0]}x{attn_shape[1]} over {probe['positions']} "
                       f"positions (input {h}x{w})")


def check_determinism() -> CheckResult:
    cfg = DMNetConfig(channels=8, n_groups=1, n_blocks=1, scale=2)
    rng = np.random.default_rng(9)
    hr = rng.uniform(0, 1, (3, 16, 16)).astype(np.float32)
    data = [ImagePair("p", hr[:, ::2, ::2].copy(), hr)]
    tcfg = TrainConfig(batch=1, patch=8, total_iters=3, log_interval=1, seed=3)
    runs = []
    for _ in range(2):
        w, _, recs = train_loop(cfg, tcfg, data)
        out = super_resolve(cfg, w, Tensor(data[0].lr[None])).data
        runs.append(("\n".join(r.line() for r in recs), out.tobytes()))
    ok = runs[0] == runs[1]
    return CheckResult("determinism", ok, "identical logs and outputs" if ok else "runs differ")


def run_selfcheck(fault: Optional[str] = None, grad_tol: float = GRAD_TOL) -> List[CheckResult]:
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}; choose from {FAULTS}")
    results = check_dwt(fault)
    results += check_fourier()
    results += check_block_gradients(grad_tol)
    results += check_loss_gradients(grad_tol)
    results += check_residual_identity()
    results.append(check_wma_locality())
    results.append(check_determinism())
    return results
