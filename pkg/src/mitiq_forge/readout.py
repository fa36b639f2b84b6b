"""Closed-form readout-error algebra for parity observables.

A parity observable P on N measured bits has eigenvalue (-1)^{n_1(q)} on
bit string q. With independent flips (0 -> 1 at rate e0, 1 -> 0 at rate
e1) the biased expectation is a weighted sum over the noiseless
distribution f(q), and for small N it reduces to affine maps of <P>.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np


class ReadoutError(ValueError):
    pass


class NonInvertibleError(ReadoutError):
    pass


class ClampWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ReadoutRates:
    """Per-qubit flip probabilities: e0 reads a 0 as 1, e1 reads a 1 as 0."""

    e0: tuple[float, ...]
    e1: tuple[float, ...]

    def __post_init__(self):
        e0 = tuple(float(x) for x in np.atleast_1d(self.e0))
        e1 = tuple(float(x) for x in np.atleast_1d(self.e1))
        if len(e0) != len(e1):
            raise ReadoutError("e0 and e1 need equal length")
        if any(not 0.0 <= x < 0.5 for x in e0 + e1):
            raise ReadoutError("readout rates must lie in [0, 0.5)")
        object.__setattr__(self, "e0", e0)
        object.__setattr__(self, "e1", e1)

    @classmethod
    def uniform(cls, e0: float, e1: float, n: int) -> ReadoutRates:
        return cls((e0,) * n, (e1,) * n)

    @property
    def n(self) -> int:
        return len(self.e0)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.e0), np.array(self.e1)

    def broadcast(self, n: int) -> ReadoutRates:
        """Rates for ``n`` qubits; a single-qubit rate set is repeated."""
        if self.n == n:
            return self
        if self.n == 1:
            return ReadoutRates.uniform(self.e0[0], self.e1[0], n)
        raise ReadoutError(f"rates given for {self.n} qubits, need {n}")


def _bit_table(N: int) -> np.ndarray:
    """(2^N, N) bits; row index j has bit i = (j >> i) & 1."""
    j = np.arange(2 ** N)
    return ((j[:, None] >> np.arange(N)) & 1).astype(bool)


def parity_signs(N: int) -> np.ndarray:
    return np.where(_bit_table(N).sum(axis=1) % 2 == 0, 1.0, -1.0)


def _check_distribution(f: np.ndarray) -> int:
    f = np.asarray(f, dtype=float)
    N = f.size.bit_length() - 1
    if f.ndim != 1 or f.size != 2 ** N:
        raise ReadoutError("distribution must have 2^N entries")
    if np.any(f < -1e-15) or abs(f.sum() - 1.0) > 1e-9:
        raise ReadoutError("distribution must be non-negative and sum to 1")
    return N


def parity_of(f: np.ndarray) -> float:
    """Noiseless <P> = sum_q f(q) (-1)^{n_1(q)}."""
    N = _check_distribution(f)
    return float(parity_signs(N) @ np.asarray(f, float))


def biased_parity_exact(f: np.ndarray, r: ReadoutRates) -> float:
    """Biased parity: each string weighted by prod (1-2e0) over 0 bits and (1-2e1) over 1 bits."""
    N = _check_distribution(f)
    e0, e1 = r.broadcast(N).arrays()
    bits = _bit_table(N)
    damp = np.where(bits, 1 - 2 * e1, 1 - 2 * e0).prod(axis=1)
    return float(np.sum(parity_signs(N) * np.asarray(f, float) * damp))


def confusion_propagate(f: np.ndarray, r: ReadoutRates) -> np.ndarray:
    """Observed distribution from the full 2^N x 2^N confusion matrix (test oracle)."""
    N = _check_distribution(f)
    e0, e1 = r.broadcast(N).arrays()
    bits = _bit_table(N)
    # P(read b | true a) per qubit
    a = bits[None, :, :]
    b = bits[:, None, :]
    stay = np.where(a, 1 - e1, 1 - e0)
    flip = np.where(a, e1, e0)
    T = np.where(a == b, stay, flip).prod(axis=2)
    return T @ np.asarray(f, float)


def biased_parity_N1(p: float, r: ReadoutRates) -> float:
    """Single measured bit: <P~> = <P>(1 - e0 - e1) + e1 - e0."""
    e0, e1 = r.broadcast(1).e0[0], r.broadcast(1).e1[0]
    return p * (1 - e0 - e1) + e1 - e0


def biased_parity_N2_bounds(p: float, r: ReadoutRates) -> tuple[float, float, float]:
    """Bounds (lo, hi) on the two-bit biased parity and the midpoint approximation.

    Uniform rates only; e0 and e1 are swapped if needed so that e1 >= e0.
    The midpoint p (1-e0-e1)^2 + (e1-e0)^2 is linear in p.
    """
    rr = r.broadcast(2)
    if len(set(rr.e0)) != 1 or len(set(rr.e1)) != 1:
        raise ReadoutError("two-bit bounds need uniform rates")
    e0, e1 = rr.e0[0], rr.e1[0]
    if e1 < e0:
        e0, e1 = e1, e0
    s = 1 - e0 - e1
    d = e1 - e0
    lo = (1 - 2 * e1) * (p * s - d)
    hi = (1 - 2 * e0) * (s * p + d)
    mid = p * s ** 2 + d ** 2
    return lo, hi, mid


def biased_parity_approx(p: float, r: ReadoutRates, N: int | None = None) -> float:
    """Many-bit approximation <P~> ~ <P> prod (1 - e0 - e1).

    Warns when N < 3, where the offset terms are not negligible.
    """
    N = r.n if N is None else N
    if N < 3:
        warnings.warn("the product approximation is intended for N >= 3", stacklevel=2)
    e0, e1 = r.broadcast(N).arrays()
    return float(p * np.prod(1 - e0 - e1))


@dataclass(frozen=True)
class MitigatedParity:
    value: float
    sigma: float
    clamped: bool = False


def parity_response(e0: Sequence[float], e1: Sequence[float], N: int) -> tuple[float, float]:
    """Slope and offset of the affine map <P> -> <P~> used for mitigation.

    N = 1 is exact; N = 2 uses the bound midpoint generalized to per-qubit
    rates; larger N drops the offset.
    """
    e0 = np.broadcast_to(np.asarray(e0, float), (N,))
    e1 = np.broadcast_to(np.asarray(e1, float), (N,))
    slope = float(np.prod(1 - e0 - e1))
    if N == 1:
        offset = float(e1[0] - e0[0])
    elif N == 2:
        offset = float(np.prod(e1 - e0))
    else:
        offset = 0.0
    return slope, offset


def mitigate_affine(p_noisy: float, sigma: float, slope: float, offset: float) -> MitigatedParity:
    """Invert <P~> = slope <P> + offset, clamping to [-1 - 3 sigma, 1 + 3 sigma]."""
    if slope < 1e-6:
        raise NonInvertibleError(f"readout slope {slope:.3g} too small to invert")
    value = (p_noisy - offset) / slope
    sig = sigma / slope
    bound = 1.0 + 3.0 * sig
    clamped = abs(value) > bound
    if clamped:
        value = float(np.clip(value, -bound, bound))
        warnings.warn(f"mitigated parity clamped to {value:.4f}", ClampWarning, stacklevel=2)
    return MitigatedParity(float(value), float(sig), bool(clamped))


def mitigate_parity(p_noisy: float, sigma: float, r: ReadoutRates, N: int | None = None) -> MitigatedParity:
    """Invert the readout bias of a measured parity.

    N = 1 and N = 2 remove the additive offset before dividing by the slope;
    larger N divides by the slope only. Sigma scales by the same factor.
    """
    N = r.n if N is None else N
    if N < 1:
        raise ReadoutError("need at least one measured qubit")
    e0, e1 = r.broadcast(N).arrays()
    return mitigate_affine(p_noisy, sigma, *parity_response(e0, e1, N))


def unbiased_parity(counts: Mapping[str, float], e0: Sequence[float], e1: Sequence[float]) -> float:
    """Parity estimate that is exact in expectation under independent flips.

    Each shot contributes prod_j (s_j - b_j) / a_j with s_j = +-1 the read
    bit, a_j = 1 - e0_j - e1_j and b_j = e1_j - e0_j. Since
    E[s_j - b_j | true bit] = a_j (-1)^bit, the mean is <P> for any
    distribution, whereas the affine maps above only see the pooled parity
    and miss the single-bit marginals at N = 2. ``counts`` may hold
    probabilities instead of integers.
    """
    keys = list(counts)
    if not keys:
        raise ReadoutError("no shots")
    N = len(keys[0])
    e0 = np.broadcast_to(np.asarray(e0, float), (N,))
    e1 = np.broadcast_to(np.asarray(e1, float), (N,))
    a = 1 - e0 - e1
    if np.prod(a) < 1e-6:
        raise NonInvertibleError(f"readout slope {np.prod(a):.3g} too small to invert")
    s = np.array([[1.0 if c == "0" else -1.0 for c in k] for k in keys])
    w = np.array([counts[k] for k in keys], float)
    stat = ((s - (e1 - e0)) / a).prod(axis=1)
    return float(w @ stat / w.sum())


def random_distributions(N: int, count: int, rng: np.random.Generator,
                         concentration: float = 1.0) -> np.ndarray:
    """(count, 2^N) Dirichlet-distributed probability vectors."""
    return rng.dirichlet(np.full(2 ** N, concentration), size=count)


def residual_table(N: int, count: int, e0: float, e1: float, seed: int) -> dict:
    """Exact biased parity against the closed-form approximation for random f.

    N = 1 uses the exact affine map, N = 2 the bound midpoint and larger N
    the product approximation.
    """
    rng = np.random.default_rng(seed)
    r = ReadoutRates.uniform(e0, e1, N)
    fs = random_distributions(N, count, rng)
    signs = parity_signs(N)
    e0a, e1a = r.arrays()
    damp = np.where(_bit_table(N), 1 - 2 * e1a, 1 - 2 * e0a).prod(axis=1)
    p = fs @ signs
    exact = fs @ (signs * damp)
    if N == 1:
        approx = p * (1 - e0 - e1) + e1 - e0
        lo = hi = approx
    elif N == 2:
        lo, hi, approx = biased_parity_N2_bounds(p, r)
    else:
        approx = p * np.prod(1 - e0a - e1a)
        lo = hi = None
    res = exact - approx
    out = {"N": N, "p": p, "exact": exact, "approx": approx, "residual": res,
           "rms": float(np.sqrt(np.mean(res ** 2)))}
    if N == 2:
        out["lo"], out["hi"] = lo, hi
    return out


def offset_magnitude(N: int, e0: float, e1: float) -> float:
    """Biased parity of an equal mixture of |0...0> and |10...0>, where <P> = 0."""
    s0 = (1 - 2 * e0)
    s1 = (1 - 2 * e1)
    # even weight-0 string vs odd weight-1 string
    even = s0 ** N
    odd = -(s0 ** (N - 1)) * s1
    return abs(0.5 * (even + odd))
