"""
Ratio-method analysis of exact series.

All arithmetic runs at PRECISION decimal digits through mpmath; inputs are
exact integers of hundreds of digits.
A Trail is an estimator sequence indexed by n (or L); every transform keeps
the index of the newest term it used.
"""

from dataclasses import dataclass
from functools import wraps
from typing import Any, Dict, List, Optional, Sequence, Tuple

import mpmath
import numpy as np
from mpmath import mp, mpf
from pydantic import BaseModel, ConfigDict, Field, model_validator

from gerrymander.errors import ContractViolation, InsufficientDataError, SeriesDomainError

PRECISION = 60
MIN_FIT_TERMS = 8


def precise(func):
    """Run func with PRECISION working digits."""

    @wraps(func)
    def wrapper(*args, **kwargs):
        with mp.workdps(PRECISION):
            return func(*args, **kwargs)

    return wrapper


class SeriesSample(BaseModel):
    """
    Indexed series terms.

    values hold ints (exact) or mpf (derived or predicted); digits[i] is
    None for an exact term and the agreed significant digits for a
    predicted one.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    indices: List[int]
    values: List[Any]
    digits: List[Optional[float]] = Field(default_factory=list)
    offset: int = 0
    name: str = ""

    @model_validator(mode="after")
    def _consistent(self):
        if len(self.indices) != len(self.values):
            raise ValueError(f"{len(self.indices)} indices for {len(self.values)} values")
        if not self.digits:
            self.digits = [None] * len(self.values)
        if len(self.digits) != len(self.values):
            raise ValueError("digits must tag every value")
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise ValueError("indices must be strictly increasing")
        return self

    @classmethod
    def from_values(cls, values: Sequence, start: int = 1, name: str = "") -> "SeriesSample":
        return cls(indices=list(range(start, start + len(values))), values=list(values), name=name)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def exact_count(self) -> int:
        return sum(1 for d in self.digits if d is None)

    def trimmed(self) -> "SeriesSample":
        """Drop leading zero terms, recording how many were dropped."""
        skip = 0
        while skip < len(self.values) and self.values[skip] == 0:
            skip += 1
        return SeriesSample(indices=self.indices[skip:], values=self.values[skip:],
                            digits=self.digits[skip:], offset=self.offset + skip, name=self.name)

    def usable(self, min_digits: float) -> "SeriesSample":
        """Cut the sample at the first predicted term agreeing to fewer than min_digits."""
        keep = len(self.values)
        for i, d in enumerate(self.digits):
            if d is not None and d < min_digits:
                keep = i
                break
        return SeriesSample(indices=self.indices[:keep], values=self.values[:keep],
                            digits=self.digits[:keep], offset=self.offset, name=self.name)

    def lookup(self) -> Dict[int, Any]:
        return dict(zip(self.indices, self.values))


@dataclass
class Trail:
    """Estimator sequence: values[i] belongs to index indices[i]."""

    indices: List[int]
    values: List[mpf]

    def __len__(self) -> int:
        return len(self.values)

    @property
    def last(self) -> mpf:
        if not self.values:
            raise InsufficientDataError("empty estimator trail")
        return self.values[-1]

    def tail(self, window: int) -> List[mpf]:
        return self.values[-window:]

    def spread(self, window: int) -> Tuple[mpf, mpf]:
        tail = self.tail(window)
        return min(tail), max(tail)

    def lookup(self) -> Dict[int, mpf]:
        return dict(zip(self.indices, self.values))

    def pairs(self, digits: int = 20) -> List[List]:
        """(index, value) rows for reports and plotting."""
        return [[n, mpmath.nstr(v, digits)] for n, v in zip(self.indices, self.values)]

    def since(self, start: int) -> "Trail":
        keep = [i for i, n in enumerate(self.indices) if n >= start]
        return Trail([self.indices[i] for i in keep], [self.values[i] for i in keep])


@precise
def ratios(s: SeriesSample) -> Trail:
    """r_n = c_n / c_{n-1} over consecutive indices."""
    if len(s) < 2:
        raise InsufficientDataError(f"ratios need at least 2 terms, got {len(s)}")
    values = [mpf(v) for v in s.values]
    if any(v <= 0 for v in values):
        n = s.indices[next(i for i, v in enumerate(values) if v <= 0)]
        raise SeriesDomainError(f"term {n} of {s.name or 'series'} is not positive")
    indices, out = [], []
    for i in range(1, len(values)):
        if s.indices[i] != s.indices[i - 1] + 1:
            raise SeriesDomainError(f"gap between indices {s.indices[i - 1]} and {s.indices[i]}")
        indices.append(s.indices[i])
        out.append(values[i] / values[i - 1])
    return Trail(indices, out)


@precise
def intercept(trail: Trail, level: int = 1, step: int = 1) -> Trail:
    """
    Richardson intercepts x_L = [L^k x_L - (L-s)^k x_{L-s}] / (L^k - (L-s)^k).

    Level k removes an O(1/L^k) correction; step 2 pairs same-parity terms.
    """
    if level < 1 or step < 1:
        raise ContractViolation(f"intercept needs level >= 1 and step >= 1, got {level}, {step}")
    known = trail.lookup()
    indices, out = [], []
    for n, x in zip(trail.indices, trail.values):
        prev = known.get(n - step)
        if prev is None:
            continue
        a, b = mpf(n) ** level, mpf(n - step) ** level
        indices.append(n)
        out.append((a * x - b * prev) / (a - b))
    return Trail(indices, out)


def linear_intercepts(r: Trail, parity: bool = False) -> Trail:
    """l_n = n r_n - (n-1) r_{n-1}, or the parity-averaged ½[n r_n - (n-2) r_{n-2}]."""
    return intercept(r, 1, 2 if parity else 1)


def quadratic_intercepts(l: Trail) -> Trail:
    """q_L = [L² l_L - (L-1)² l_{L-1}] / (2L-1)."""
    return intercept(l, 2, 1)


@precise
def exponent_known_zc(r: Trail, zc) -> Trail:
    zc = mpf(zc)
    if zc <= 0:
        raise ContractViolation(f"critical point must be positive, got {zc}")
    return Trail(list(r.indices), [n * (zc * x - 1) + 1 for n, x in zip(r.indices, r.values)])


@precise
def exponent_unknown_zc(r: Trail) -> Trail:
    known = r.lookup()
    indices, out = [], []
    for n, x in zip(r.indices, r.values):
        if n - 1 in known:
            indices.append(n)
            out.append(1 + mpf(n) ** 2 * (1 - x / known[n - 1]))
    return Trail(indices, out)


@precise
def growth_known_gamma(r: Trail, gamma) -> Trail:
    """mu_n = n r_n / (n + gamma - 1); indices with a zero denominator are skipped."""
    gamma = mpf(gamma)
    indices, out = [], []
    for n, x in zip(r.indices, r.values):
        denominator = n + gamma - 1
        if denominator == 0:
            continue
        indices.append(n)
        out.append(n * x / denominator)
    return Trail(indices, out)


@precise
def normalize_lattice(s: SeriesSample, lam=None, mode: str = "divide", other: Optional[SeriesSample] = None) -> SeriesSample:
    """
    Strip the dominant lattice-square growth.

    Args:
        s: series indexed by L
        lam: growth constant (divide mode)
        mode: "divide" gives c_L / lam^(L²); "pair" gives s_L / other_L
        other: denominator series for pair mode

    Returns:
        SeriesSample of mpf values with the same indices and digit tags
    """
    if mode == "divide":
        lam = mpf(lam)
        if lam <= 1:
            raise ContractViolation(f"growth constant must exceed 1, got {lam}")
        values = [mpf(v) / lam ** (n * n) for n, v in zip(s.indices, s.values)]
        return SeriesSample(indices=list(s.indices), values=values, digits=list(s.digits),
                            offset=s.offset, name=s.name)
    if mode == "pair":
        if other is None or other.indices != s.indices:
            raise SeriesDomainError("pair normalisation needs two series over the same indices")
        values = [mpf(a) / mpf(b) for a, b in zip(s.values, other.values)]
        digits = [_worst(a, b) for a, b in zip(s.digits, other.digits)]
        return SeriesSample(indices=list(s.indices), values=values, digits=digits, offset=s.offset,
                            name=f"{s.name}/{other.name}")
    raise ContractViolation(f"unknown normalisation mode {mode!r}")


class RatioDiagnostics(BaseModel):
    """Plot-ready (n, value) rows of the standard ratio-method trails."""

    r: List[List]
    l: List[List]
    l_parity: List[List]
    q2: List[List]
    gamma_unknown_zc: List[List]
    gamma_known_zc: List[List] = Field(default_factory=list)
    mu_known_gamma: List[List] = Field(default_factory=list)


def ratio_diagnostics(s: SeriesSample, zc=None, gamma=None) -> RatioDiagnostics:
    """All ratio trails of a series; the known-zc and known-gamma trails need those inputs."""
    r = ratios(s)
    l = linear_intercepts(r)
    return RatioDiagnostics(
        r=r.pairs(), l=l.pairs(), l_parity=linear_intercepts(r, parity=True).pairs(),
        q2=quadratic_intercepts(l).pairs(), gamma_unknown_zc=exponent_unknown_zc(r).pairs(),
        gamma_known_zc=exponent_known_zc(r, zc).pairs() if zc is not None else [],
        mu_known_gamma=growth_known_gamma(r, gamma).pairs() if gamma is not None else [],
    )


def _worst(a: Optional[float], b: Optional[float]) -> Optional[float]:
    if a is None:
        return b
    if b is None:
        return a
    return min(a, b)


class Estimate(BaseModel):
    value: float
    low: float
    high: float


class AsymptoticFit(BaseModel):
    """c_L ~ lam^(L² + d L + e) L^h and the derived report fields."""

    lam: float
    mu: Estimate
    d: Estimate
    h: Estimate
    amplitude: Estimate
    e: Estimate
    terms: int
    step: int
    window: int
    alpha: Optional[float] = None
    beta: Optional[float] = None
    delta: Optional[float] = None
    levels: Dict[str, int] = Field(default_factory=dict)
    trails: Dict[str, List[List]] = Field(default_factory=dict)


def _estimate(trail: Trail, window: int) -> Estimate:
    low, high = trail.spread(window)
    return Estimate(value=float(trail.last), low=float(low), high=float(high))


def _deepest_positive(chain: List[Trail]) -> Tuple[int, Trail]:
    """Deepest (level, trail) whose newest value is positive; level 0 is the raw trail."""
    for level in range(len(chain) - 1, 0, -1):
        if len(chain[level]) and chain[level].last > 0:
            return level, chain[level]
    if not len(chain[0]) or chain[0].last <= 0:
        raise SeriesDomainError("no positive estimate to take the logarithm of")
    return 0, chain[0]


def _log_trail(trail: Trail, log_lam) -> Trail:
    """log(x) / log(lam) over the positive entries."""
    keep = [(n, v) for n, v in zip(trail.indices, trail.values) if v > 0]
    return Trail([n for n, _ in keep], [mpmath.log(v) / log_lam for _, v in keep])


@precise
def fit_subdominant(s: SeriesSample, lam, window: int = 5, step: int = 2,
                    b: Optional[float] = None, c: Optional[float] = None, g: Optional[float] = None) -> AsymptoticFit:
    """
    Fit mu^L F L^h to a normalised lattice sequence (c_L / lam^(L²)).

    mu comes from up to three levels of intercepts on the ratio trail and
    gives d = log mu / log lam. The trail (r_L/mu - 1) L gives h after two
    levels, and c_L / (mu^L L^h) gives F = lam^e after up to one. On short
    samples a deeper level can swing negative; the deepest level whose
    newest value is positive is used and recorded in levels.

    Args:
        s: normalised sample, at least MIN_FIT_TERMS terms
        lam: growth constant used for the normalisation
        window: number of final extrapolants whose spread is the uncertainty
        step: intercept step, 2 averages out parity effects
        b, c, g: optional corner-to-corner walk constants for alpha, beta, delta

    Returns:
        AsymptoticFit with all intermediate trails
    """
    if len(s) < MIN_FIT_TERMS:
        raise InsufficientDataError(f"fit needs at least {MIN_FIT_TERMS} terms, got {len(s)}")
    lam = mpf(lam)
    log_lam = mpmath.log(lam)
    r = ratios(s)
    mu_chain = [r]
    for level in (1, 2, 3):
        mu_chain.append(intercept(mu_chain[-1], level, step))
    mu_level, mu_trail = _deepest_positive(mu_chain)
    mu = mu_trail.last
    d_trail = _log_trail(mu_trail, log_lam)

    deviation = Trail(r.indices, [(x / mu - 1) * n for n, x in zip(r.indices, r.values)])
    h1 = intercept(deviation, 1, step)
    h2 = intercept(h1, 2, step)
    h = h2.last

    amplitude = Trail(list(s.indices), [mpf(v) / (mu ** n * mpf(n) ** h) for n, v in zip(s.indices, s.values)])
    amplitude_level, f_trail = _deepest_positive([amplitude, intercept(amplitude, 1, step)])
    e_trail = _log_trail(f_trail, log_lam)

    fit = AsymptoticFit(
        lam=float(lam), mu=_estimate(mu_trail, window), d=_estimate(d_trail, window), h=_estimate(h2, window),
        amplitude=_estimate(f_trail, window), e=_estimate(e_trail, window),
        terms=len(s), step=step, window=window,
        levels={"mu": mu_level, "amplitude": amplitude_level},
        trails={"ratio": r.pairs(), "mu": mu_trail.pairs(), "d": d_trail.pairs(), "deviation": deviation.pairs(),
                "h": h2.pairs(), "amplitude": f_trail.pairs(), "e": e_trail.pairs()},
    )
    if b is not None:
        fit.alpha = b - fit.d.value
    if c is not None:
        fit.beta = c - fit.e.value
    if g is not None:
        fit.delta = g - fit.h.value
    return fit


def fit_lattice_sequence(s: SeriesSample, lam, **kwargs) -> AsymptoticFit:
    """Trim, divide by lam^(L²) and fit."""
    return fit_subdominant(normalize_lattice(s.trimmed(), lam), lam, **kwargs)


def polyfit_limit(trail: Trail, degree: int = 2, start: Optional[int] = None) -> float:
    """Constant term of a least-squares polynomial in 1/L fitted to the trail from index start."""
    part = trail.since(start) if start is not None else trail
    if len(part) < degree + 1:
        raise InsufficientDataError(f"degree-{degree} fit needs {degree + 1} points, got {len(part)}")
    x = 1.0 / np.array(part.indices, dtype=float)
    y = np.array([float(v) for v in part.values])
    return float(np.polyfit(x, y, degree)[-1])


def window_sensitivity(trail: Trail, starts: Sequence[int], degree: int = 2) -> Dict[int, float]:
    """Extrapolated limit for each fit-start index; starts with too few points are left out."""
    table = {}
    for start in starts:
        try:
            table[start] = polyfit_limit(trail, degree, start)
        except InsufficientDataError:
            continue
    return table


@precise
def ratio_of_ratios(s: SeriesSample, lam, power: int = 4) -> Trail:
    """t_L = (r_L / lam^power - 1) L for pair sequences whose ratios approach lam^power."""
    limit = mpf(lam) ** power
    r = ratios(s)
    return Trail(list(r.indices), [(x / limit - 1) * n for n, x in zip(r.indices, r.values)])


@precise
def partition_to_central(partitions: SeriesSample, central: SeriesSample) -> Trail:
    """(G_L(1)/2) / (L ĝ_L) over the indices both series share with ĝ_L > 0."""
    c = central.lookup()
    indices, out = [], []
    for n, v in zip(partitions.indices, partitions.values):
        if c.get(n):
            indices.append(n)
            out.append(mpf(v) / (n * mpf(c[n])))
    return Trail(indices, out)
