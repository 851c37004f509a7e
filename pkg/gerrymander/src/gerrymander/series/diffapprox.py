"""
Differential approximants.

An approximant of order M is the ODE

    sum_{k=0}^{M} Q_k(z) (z d/dz)^k F(z) = P(z),    Q_M(0) = 1,

whose coefficients are fixed by matching the first N series terms. The
linear solve is exact (LU over the rationals with sympy); only root
finding on Q_M is done in floating point.
"""

import concurrent.futures
from fractions import Fraction
from statistics import median
from threading import Lock
from typing import Any, Dict, List, Optional, Sequence

import mpmath
import numpy as np
from mpmath import mp, mpf
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from sympy import QQ
from sympy.polys.matrices import DomainMatrix

from gerrymander.errors import (
    ContractViolation,
    InsufficientDataError,
    PredictionUnavailable,
    RankDeficiencyError,
    SeriesDomainError,
)
from gerrymander.series.analysis import PRECISION, SeriesSample

ROOT_DIGITS = 50
RESIDUAL_TOLERANCE = 1e-12
MULTIPLE_ROOT_TOLERANCE = 1e-10
MIN_PREDICTION_TERMS = 10


class DAConfig(BaseModel):
    """Order M, degrees N_0..N_M of Q_0..Q_M and degree K of P (K = -1: homogeneous)."""

    order: int
    degrees: List[int]
    inhomogeneous: int = -1

    @field_validator("order")
    @classmethod
    def _order_positive(cls, value):
        if value < 1:
            raise ValueError("approximant order must be >= 1")
        return value

    @model_validator(mode="after")
    def _degrees_match(self):
        if len(self.degrees) != self.order + 1:
            raise ValueError(f"order {self.order} needs {self.order + 1} degrees, got {len(self.degrees)}")
        if any(n < 0 for n in self.degrees) or self.inhomogeneous < -1:
            raise ValueError("degrees must be >= 0 and K >= -1")
        return self

    @property
    def size(self) -> int:
        """Number of matched coefficients N = K + sum(N_k + 1)."""
        return self.inhomogeneous + sum(n + 1 for n in self.degrees)

    @property
    def label(self) -> str:
        return f"M={self.order} N={self.degrees} K={self.inhomogeneous}"


class SingularityEstimate(BaseModel):
    z: complex
    gamma: Optional[complex] = None
    residual: float = 0.0
    multiple: bool = False
    defective: bool = False

    @property
    def is_positive_real(self) -> bool:
        return self.z.real > 0 and abs(self.z.imag) <= 1e-8 * abs(self.z)


class DiffApproximant(BaseModel):
    """Fitted approximant; q[k][j] is the z^j coefficient of Q_k, p[j] that of P."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    config: DAConfig
    q: List[List[Fraction]]
    p: List[Fraction]
    singularities: List[SingularityEstimate] = Field(default_factory=list)
    defective: bool = False

    def indicial(self, m: int) -> Fraction:
        """c(m) = sum_k Q_{k,0} m^k, the coefficient of f_m in the m-th equation."""
        return sum((self.q[k][0] * m ** k for k in range(self.config.order + 1)), Fraction(0))

    def next_coefficient(self, history: Sequence[Fraction], m: int) -> Optional[Fraction]:
        """f_m from f_0..f_{m-1}; None where c(m) = 0."""
        total = self.p[m] if m < len(self.p) else Fraction(0)
        for k, poly in enumerate(self.q):
            for j in range(1, len(poly)):
                if poly[j] and m - j >= 0:
                    total -= poly[j] * (m - j) ** k * history[m - j]
        c = self.indicial(m)
        if c == 0:
            return None
        return total / c

    def regenerate(self, count: int, series: Sequence = ()) -> List[Fraction]:
        """Series solution f_0..f_{count-1}; where c(m) = 0 the given series term is used."""
        out: List[Fraction] = []
        for m in range(count):
            value = self.next_coefficient(out, m)
            if value is None:
                if m >= len(series):
                    raise SeriesDomainError(f"{self.config.label}: coefficient {m} is free and not given")
                value = to_fraction(series[m])
            out.append(value)
        return out

    def extend(self, series: Sequence, count: int) -> List[Fraction]:
        """Continue the given series by count terms through the coefficient recursion."""
        history = [to_fraction(v) for v in series]
        for m in range(len(history), len(history) + count):
            value = self.next_coefficient(history, m)
            if value is None:
                raise SeriesDomainError(f"{self.config.label}: recursion degenerates at coefficient {m}")
            history.append(value)
        return history[len(series):]


def to_fraction(value: Any) -> Fraction:
    """Exact rational value of an int, Fraction or mpf."""
    if isinstance(value, (int, Fraction)):
        return Fraction(value)
    if isinstance(value, mpf):
        man, exp = value.man_exp
        man = int(man)
        return Fraction(man * 2 ** exp) if exp >= 0 else Fraction(man, 2 ** -exp)
    raise ContractViolation(f"cannot take {type(value).__name__} as an exact series term")


def solve_exact(matrix: List[List[Fraction]], rhs: List[Fraction]) -> List[Fraction]:
    """
    Solve a square rational system over QQ.

    Raises:
        RankDeficiencyError: the matrix is singular
    """
    n = len(matrix)
    a = DomainMatrix([[QQ(v.numerator, v.denominator) for v in row] for row in matrix], (n, n), QQ)
    rank = a.rank()
    if rank < n:
        raise RankDeficiencyError(n, rank)
    b = DomainMatrix([[QQ(Fraction(v).numerator, Fraction(v).denominator)] for v in rhs], (n, 1), QQ)
    x = a.lu_solve(b)
    # entries are QQ elements (python or gmpy rationals)
    return [Fraction(int(e.numerator), int(e.denominator)) for e in (x[i, 0].element for i in range(n))]


def fit_da(s: SeriesSample, cfg: DAConfig) -> DiffApproximant:
    """
    Match cfg.size coefficients of s exactly.

    The m-th equation (m = 0..N-1) reads
        sum_{k,j} Q_{k,j} (m-j)^k f_{m-j} - [m <= K] P_m = 0
    with Q_{M,0} = 1 moved to the right-hand side.
    """
    n = cfg.size
    if n < 1:
        raise ContractViolation(f"{cfg.label} matches no coefficients")
    if n > len(s):
        raise InsufficientDataError(f"{cfg.label} needs {n} coefficients, series has {len(s)}")
    f = [to_fraction(v) for v in s.values[:n]]
    unknowns = [(k, j) for k in range(cfg.order + 1) for j in range(cfg.degrees[k] + 1)
                if (k, j) != (cfg.order, 0)]
    unknowns += [("P", j) for j in range(cfg.inhomogeneous + 1)]
    matrix, rhs = [], []
    for m in range(n):
        row = []
        for k, j in unknowns:
            if k == "P":
                row.append(Fraction(-1) if j == m else Fraction(0))
            else:
                row.append(Fraction((m - j) ** k) * f[m - j] if m >= j else Fraction(0))
        matrix.append(row)
        rhs.append(-Fraction(m ** cfg.order) * f[m])
    solution = dict(zip(unknowns, solve_exact(matrix, rhs)))
    q = [[solution.get((k, j), Fraction(1) if (k, j) == (cfg.order, 0) else Fraction(0))
          for j in range(cfg.degrees[k] + 1)] for k in range(cfg.order + 1)]
    p = [solution[("P", j)] for j in range(cfg.inhomogeneous + 1)]
    return DiffApproximant(config=cfg, q=q, p=p)


def _polyval(coeffs: List[mpf], z):
    return mpmath.polyval(list(reversed(coeffs)), z)


def singularities(da: DiffApproximant) -> List[SingularityEstimate]:
    """
    Roots of Q_M with exponents gamma = Q_{M-1}(z) / (z Q_M'(z)) - (M - 1).

    Roots whose residual exceeds RESIDUAL_TOLERANCE are flagged defective;
    multiple roots carry no exponent.
    """
    order = da.config.order
    with mp.workdps(ROOT_DIGITS):
        top = [mpf(c.numerator) / c.denominator for c in da.q[order]]
        while len(top) > 1 and top[-1] == 0:
            top.pop()
        if len(top) < 2:
            da.singularities = []
            return []
        below = [mpf(c.numerator) / c.denominator for c in da.q[order - 1]]
        derivative = [j * c for j, c in enumerate(top)][1:]
        try:
            roots = mpmath.polyroots(list(reversed(top)), maxsteps=400, extraprec=2 * ROOT_DIGITS * 4)
        except mpmath.libmp.NoConvergence:
            da.defective = True
            da.singularities = []
            return []
        estimates = []
        for z in roots:
            z = mpmath.mpc(z)
            scale = sum(abs(c) * abs(z) ** j for j, c in enumerate(top))
            residual = abs(_polyval(top, z)) / scale
            slope = _polyval(derivative, z)
            multiple = abs(slope) < MULTIPLE_ROOT_TOLERANCE * scale / max(abs(z), 1)
            gamma = None
            if not multiple and z != 0:
                gamma = complex(_polyval(below, z) / (z * slope) - (order - 1))
            estimates.append(SingularityEstimate(z=complex(z), gamma=gamma, residual=float(residual),
                                                 multiple=multiple, defective=residual > RESIDUAL_TOLERANCE))
    estimates.sort(key=lambda e: (abs(e.z), e.z.imag))
    da.singularities = estimates
    return estimates


def physical_root(da: DiffApproximant) -> Optional[SingularityEstimate]:
    """Smallest positive real root of Q_M."""
    candidates = [e for e in da.singularities if e.is_positive_real and not e.defective]
    return min(candidates, key=lambda e: e.z.real) if candidates else None


def mark_defective(das: List[DiffApproximant], margin: float = 0.01, z_score: float = 3.0,
                   verbose: bool = False) -> List[DiffApproximant]:
    """
    Flag approximants with a root strictly inside the consensus radius.

    The consensus radius is the median physical root. A second pass drops
    physical-root estimates beyond z_score standard deviations of the rest.
    With fewer than three approximants nothing is filtered.

    Returns:
        the approximants left unflagged
    """
    if len(das) < 3:
        print(f"⚠️ Only {len(das)} approximant(s); defect filtering skipped")
        return [da for da in das if not da.defective]
    for da in das:
        if not da.singularities and not da.defective:
            singularities(da)
    radii = {id(da): physical_root(da) for da in das}
    known = [r.z.real for r in radii.values() if r is not None]
    if not known:
        for da in das:
            da.defective = True
        return []
    consensus = median(known)
    for da in das:
        root = radii[id(da)]
        if root is None or any(abs(e.z) < consensus * (1 - margin) for e in da.singularities):
            da.defective = True
    alive = [da for da in das if not da.defective]
    if len(alive) >= 3 and z_score:
        values = [radii[id(da)].z.real for da in alive]
        mean, std = float(np.mean(values)), float(np.std(values))
        if std > 0:
            for da, v in zip(alive, values):
                if abs(v - mean) > z_score * std:
                    da.defective = True
    survivors = [da for da in das if not da.defective]
    if verbose:
        print(f"🔍 {len(das) - len(survivors)} of {len(das)} approximants flagged defective "
              f"(consensus radius {consensus:.10g})")
    return survivors


def default_grid(n_max: int, orders: Sequence[int] = (1, 2, 3), window: int = 10,
                 inhomogeneous: Sequence[int] = (-1, 0, 1)) -> List[DAConfig]:
    """Near-diagonal configurations matching between n_max - window and n_max coefficients."""
    grid = []
    for order in orders:
        for base in range(1, n_max + 1):
            for tilt in (-1, 0, 1):
                degrees = [base] * order + [base + tilt]
                if degrees[-1] < 1:
                    continue
                for k in inhomogeneous:
                    cfg = DAConfig(order=order, degrees=degrees, inhomogeneous=k)
                    if n_max - window <= cfg.size <= n_max:
                        grid.append(cfg)
    return grid


class Prediction(BaseModel):
    """Mean over surviving approximants for one coefficient."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    index: int
    value: Any
    std: float
    digits: float
    contributors: int


def _fit_all(s: SeriesSample, grid: Sequence[DAConfig], threads: int) -> List[DiffApproximant]:
    fitted: Dict[int, DiffApproximant] = {}
    fitted_lock = Lock()

    def fit(i: int, cfg: DAConfig):
        try:
            return fit_da(s, cfg)
        except (RankDeficiencyError, InsufficientDataError):
            return None

    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        future_to_config = {executor.submit(fit, i, cfg): i for i, cfg in enumerate(grid)}
        for future in concurrent.futures.as_completed(future_to_config):
            da = future.result()
            if da is not None:
                with fitted_lock:
                    fitted[future_to_config[future]] = da
    return [fitted[i] for i in sorted(fitted)]


def _agreement(values: List[mpf], mad_cut: float):
    centre = mpmath.mpf(median(values))
    mad = median([abs(v - centre) for v in values])
    kept = [v for v in values if abs(v - centre) <= mad_cut * mad] if mad > 0 else [v for v in values if v == centre]
    mean = mpmath.fsum(kept) / len(kept)
    std = mpmath.sqrt(mpmath.fsum((v - mean) ** 2 for v in kept) / len(kept))
    spread = max(kept) - min(kept)
    if spread == 0 or mean == 0:
        digits = float(PRECISION)
    else:
        digits = float(min(PRECISION, max(0, mpmath.floor(-mpmath.log10(spread / abs(mean))))))
    return mean, float(std), digits, len(kept)


def predict_coefficients(s: SeriesSample, grid: Optional[Sequence[DAConfig]] = None, count: int = 20,
                         mad_cut: float = 3.0, z_score: float = 3.0, margin: float = 0.01,
                         threads: int = 1, verbose: bool = False) -> List[Prediction]:
    """
    Predict count further coefficients from a grid of approximants.

    Args:
        s: exact terms with consecutive indices, at least MIN_PREDICTION_TERMS
        grid: configurations to fit; default_grid(len(s)) when None
        count: number of coefficients to predict
        mad_cut: per coefficient, values beyond this many median absolute
            deviations from the median are left out of the mean
        z_score, margin: defect filtering parameters (see mark_defective)
        threads: workers for the exact fits

    Returns:
        one Prediction per new index
    """
    if len(s) < MIN_PREDICTION_TERMS:
        raise InsufficientDataError(f"prediction needs at least {MIN_PREDICTION_TERMS} terms, got {len(s)}")
    if any(b != a + 1 for a, b in zip(s.indices, s.indices[1:])):
        raise SeriesDomainError("prediction needs consecutive indices")
    grid = list(grid) if grid is not None else default_grid(len(s))
    if verbose:
        print(f"🚀 Fitting {len(grid)} approximants to {len(s)} terms of {s.name or 'series'}")
    das = _fit_all(s, grid, threads)
    for da in das:
        singularities(da)
    survivors = mark_defective(das, margin, z_score, verbose)
    extensions = []
    for da in survivors:
        try:
            extensions.append(da.extend(s.values, count))
        except SeriesDomainError:
            continue
    if not extensions:
        raise PredictionUnavailable(f"no usable approximant among {len(grid)} configurations")
    predictions = []
    with mp.workdps(PRECISION):
        for offset in range(count):
            values = [mpf(ext[offset].numerator) / ext[offset].denominator for ext in extensions]
            mean, std, digits, kept = _agreement(values, mad_cut)
            predictions.append(Prediction(index=s.indices[-1] + 1 + offset, value=mean, std=std,
                                          digits=digits, contributors=kept))
    return predictions


def extend_for_ratio_analysis(s: SeriesSample, count: int, min_digits: float = 5, **kwargs) -> SeriesSample:
    """Exact terms followed by predicted ones, cut at the first prediction below min_digits."""
    predictions = predict_coefficients(s, count=count, **kwargs)
    extended = SeriesSample(
        indices=list(s.indices) + [p.index for p in predictions],
        values=list(s.values) + [p.value for p in predictions],
        digits=list(s.digits) + [p.digits for p in predictions],
        offset=s.offset, name=s.name,
    )
    return extended.usable(min_digits)
