"""Undecimated (stationary) wavelet analysis and synthesis with circular boundaries.

Signals are ``(T, C)`` or batched ``(B, T, C)``; every band keeps all ``T``
samples. Filters may be plain arrays (fixed banks) or :class:`Tensor`
parameters (learnable banks), in which case gradients flow to them.
"""
from dataclasses import dataclass, field
from math import comb, sqrt

import numpy as np

from . import autograd as ag
from .autograd import Tensor

FAMILIES = ("haar", "db2")
MODES = ("fixed", "learnable")


class WaveletError(ValueError):
    pass


@dataclass(frozen=True)
class FilterBank:
    analysis_low: object
    analysis_high: object
    synthesis_low: object
    synthesis_high: object
    mode: str = "fixed"
    family: str = "haar"

    def __post_init__(self):
        lengths = {np.shape(_raw(f))[0] for f in self.filters()}
        if len(lengths) != 1 or min(lengths) < 2:
            raise WaveletError(f"filter bank needs four equal-length vectors of length >= 2, got {sorted(lengths)}")
        if self.mode not in MODES:
            raise WaveletError(f"unknown filter bank mode {self.mode!r}")

    def filters(self):
        return (self.analysis_low, self.analysis_high, self.synthesis_low, self.synthesis_high)

    @property
    def length(self):
        return np.shape(_raw(self.analysis_low))[0]

    @property
    def trainable(self):
        return self.mode == "learnable"

    def replace(self, **kw):
        vals = dict(
            analysis_low=self.analysis_low,
            analysis_high=self.analysis_high,
            synthesis_low=self.synthesis_low,
            synthesis_high=self.synthesis_high,
            mode=self.mode,
            family=self.family,
        )
        vals.update(kw)
        return FilterBank(**vals)


@dataclass
class WaveletPyramid:
    """Bands ``d_1 .. d_S`` and ``a_S``; each has the shape of the input signal."""

    approx: object
    details: list = field(default_factory=list)

    @property
    def level(self):
        return len(self.details)

    def bands(self):
        return [*self.details, self.approx]


def _raw(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def daubechies_lowpass(n_moments):
    """Orthonormal Daubechies low-pass filter with ``n_moments`` vanishing moments.

    Built by spectral factorization of the half-band polynomial
    ``P(y) = sum_k C(p-1+k, k) y^k`` with ``y = (2 - z - 1/z) / 4``, keeping
    the roots inside the unit circle (minimum phase). Normalized to sum sqrt(2).
    """
    p = int(n_moments)
    if p < 1:
        raise WaveletError("need at least one vanishing moment")
    poly_y = [comb(p - 1 + k, k) for k in range(p)]
    y_roots = np.roots(poly_y[::-1]) if p > 1 else np.array([])
    z_roots = []
    for y in y_roots:
        b = 2.0 - 4.0 * y
        pair = np.roots([1.0, -b, 1.0])
        z_roots.append(pair[np.argmin(np.abs(pair))])
    coeffs = np.poly(np.concatenate([-np.ones(p), np.asarray(z_roots, dtype=complex)]))
    coeffs = np.real_if_close(coeffs, tol=1e6).real[::-1]
    return coeffs * (sqrt(2.0) / coeffs.sum())


def quadrature_mirror(h):
    """High-pass partner ``g[k] = (-1)^k h[L-1-k]``."""
    h = np.asarray(h, dtype=float)
    return h[::-1] * (-1.0) ** np.arange(h.shape[0])


def make_filter_bank(family="haar", mode="fixed", dtype=np.float64):
    """Classical orthonormal bank; learnable banks start from the same values.

    Synthesis vectors equal the analysis vectors: the synthesis pass runs the
    filters with negated time index, which is the adjoint of the analysis pass.
    """
    if family not in FAMILIES:
        raise WaveletError(f"unknown wavelet family {family!r}; expected one of {FAMILIES}")
    if mode not in MODES:
        raise WaveletError(f"unknown filter bank mode {mode!r}")
    h = daubechies_lowpass({"haar": 1, "db2": 2}[family]).astype(dtype)
    g = quadrature_mirror(h).astype(dtype)
    return FilterBank(h, g, h.copy(), g.copy(), mode=mode, family=family)


def _check_signal(x, levels):
    if levels < 1:
        raise WaveletError(f"decomposition level must be >= 1, got {levels}")
    data = _raw(x)
    if data.ndim not in (2, 3):
        raise WaveletError(f"signal must be (T, C) or (B, T, C), got shape {data.shape}")
    T = data.shape[-2]
    if T < 1 or T % (2 ** levels):
        raise WaveletError(f"signal length {T} is not a positive multiple of 2**{levels} = {2 ** levels}")
    if not np.all(np.isfinite(data)):
        raise WaveletError("signal contains non-finite values")


def _batched(x):
    """Return a (B, T, C) tensor plus a flag saying whether to squeeze back."""
    t = ag.as_tensor(x)
    if t.ndim == 2:
        return ag.reshape(t, (1,) + t.shape), True
    return t, False


def _any_tensor(*xs):
    return any(isinstance(x, Tensor) for x in xs)


def _unwrap(t, squeeze, keep):
    if squeeze:
        t = ag.reshape(t, t.shape[1:])
    return t if keep else t.data


def swt_forward(signal, bank, levels):
    """Analysis pyramid ``{d_1..d_S, a_S}`` via dilated circular correlation.

    ``a_s[n] = sum_k h0[k] a_{s-1}[(n + 2^(s-1) k) mod T]`` and likewise
    ``d_s`` with ``g0``. Returns arrays, or tensors if any input is a tensor.
    """
    _check_signal(signal, levels)
    keep = _any_tensor(signal, bank.analysis_low, bank.analysis_high)
    a, squeeze = _batched(signal)
    h0, g0 = bank.analysis_low, bank.analysis_high
    details = []
    for s in range(1, levels + 1):
        step = 2 ** (s - 1)
        details.append(ag.step_filter(a, g0, step))
        a = ag.step_filter(a, h0, step)
    return WaveletPyramid(
        approx=_unwrap(a, squeeze, keep),
        details=[_unwrap(d, squeeze, keep) for d in details],
    )


def iswt_inverse(pyramid, bank):
    """Synthesis: ``a_{s-1} = (h1 (*) a_s + g1 (*) d_s) / 2`` down to ``a_0``.

    ``(*)`` is circular convolution with the filter dilated by ``2^(s-1)``;
    the factor 1/2 averages the two polyphase branches.
    """
    if pyramid.level < 1:
        raise WaveletError("pyramid has no detail bands")
    shape = np.shape(_raw(pyramid.approx))
    for i, d in enumerate(pyramid.details):
        if np.shape(_raw(d)) != shape:
            raise WaveletError(f"detail band {i + 1} has shape {np.shape(_raw(d))}, approx has {shape}")
    keep = _any_tensor(pyramid.approx, *pyramid.details, bank.synthesis_low, bank.synthesis_high)
    a, squeeze = _batched(pyramid.approx)
    h1, g1 = bank.synthesis_low, bank.synthesis_high
    for s in range(pyramid.level, 0, -1):
        d, _ = _batched(pyramid.details[s - 1])
        step = -(2 ** (s - 1))
        a = (ag.step_filter(a, h1, step) + ag.step_filter(d, g1, step)) * 0.5
    return _unwrap(a, squeeze, keep)


def pr_error(bank, signal, levels):
    """Max-abs error of the analysis/synthesis round trip."""
    x = _raw(signal)
    with ag.no_grad():
        rec = _raw(iswt_inverse(swt_forward(x, _detached(bank), levels), _detached(bank)))
    return float(np.max(np.abs(rec - x))) if x.size else 0.0


def _detached(bank):
    return bank.replace(**{
        name: _raw(getattr(bank, name))
        for name in ("analysis_low", "analysis_high", "synthesis_low", "synthesis_high")
    })
