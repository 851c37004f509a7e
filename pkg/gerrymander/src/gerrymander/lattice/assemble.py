"""
Combine panel-run residues into exact gerrymander counts.

All cross-prime work happens here, once, on the final panel totals. A
residue runner maps (side, primes, scalar) to {prime: residue polynomial};
the sequential runner below is the reference, the engine supplies a
threaded one with the same contract.
"""

from typing import Callable, Dict, List, Mapping, Optional

import numpy as np
from pydantic import BaseModel, model_validator

from gerrymander.errors import ContractViolation, InternalConsistencyError
from gerrymander.lattice.modarith import PrimeSet, crt_reconstruct, gen_primes, primes_needed
from gerrymander.lattice.oracle import brute_cycles
from gerrymander.lattice.transfer import add_polys, run_panel_12, run_panel_34

POLYNOMIAL_BITS = 30
SCALAR_BITS = 62

ResidueRunner = Callable[[int, PrimeSet, bool], Mapping[int, np.ndarray]]


class PanelPolynomial(BaseModel):
    """Weighted grey-polygon census p_{L,k}; coeffs[k] is the area-k coefficient, k = 0..L²-1."""

    side: int
    coeffs: List[int]

    @model_validator(mode="after")
    def _shape(self):
        if len(self.coeffs) != max(self.side * self.side, 1):
            raise ValueError(f"panel polynomial of side {self.side} needs {self.side ** 2} coefficients")
        if any(c < 0 for c in self.coeffs):
            raise ValueError("panel coefficients must be non-negative")
        return self


class GerrymanderPolynomial(BaseModel):
    """G_L(q) with coeffs[k] = g_{L,k} for k = 0..L² (both ends zero)."""

    side: int
    coeffs: List[int]

    @model_validator(mode="after")
    def _symmetric(self):
        n = self.side * self.side
        if len(self.coeffs) != n + 1:
            raise ValueError(f"gerrymander polynomial of side {self.side} needs {n + 1} coefficients")
        if any(c < 0 for c in self.coeffs):
            raise ValueError("gerrymander coefficients must be non-negative")
        if any(self.coeffs[k] != self.coeffs[n - k] for k in range(n + 1)):
            raise ValueError("gerrymander coefficients must satisfy g_k = g_{L^2-k}")
        return self

    @property
    def terms(self) -> List[int]:
        """g_{L,k} for k = 1..L²-1."""
        return self.coeffs[1:-1]

    @property
    def total(self) -> int:
        return sum(self.coeffs)

    @property
    def central(self) -> int:
        return self.coeffs[(self.side * self.side) // 2]


class UnimodalityReport(BaseModel):
    side: int
    unimodal: bool
    first_violation: Optional[int] = None


class SandwichReport(BaseModel):
    side: int
    lower: int
    value: int
    upper: int

    @property
    def holds(self) -> bool:
        return self.lower <= self.value <= self.upper


def sequential_residues(side: int, primes: PrimeSet, scalar: bool) -> Dict[int, np.ndarray]:
    """Reference runner: both panel runs for each prime, one after the other."""
    out = {}
    for p in primes.primes:
        out[p] = add_polys(run_panel_12(side, p, scalar), run_panel_34(side, p, scalar), p)
    return out


def prime_plan(side: int, scalar: bool, extra: int = 1, skip: int = 0) -> PrimeSet:
    """Primes covering the 2^(L²) coefficient bound plus `extra` for the stability check."""
    bits = SCALAR_BITS if scalar else POLYNOMIAL_BITS
    return gen_primes(bits, primes_needed(max(side * side, 1), bits) + extra, skip=skip)


def _pad(residues: np.ndarray, length: int) -> List[int]:
    values = [int(v) for v in residues[:length]]
    if any(int(v) for v in residues[length:]):
        raise InternalConsistencyError(f"non-zero residue beyond degree {length - 1}")
    return values + [0] * (length - len(values))


def reconstruct(residues: Mapping[int, np.ndarray], primes: PrimeSet, length: int, extra: int = 1) -> List[int]:
    """
    CRT-combine per-prime residue vectors coefficient by coefficient.

    The last `extra` primes are held back for a stability check: the
    reconstruction with and without them must agree.
    """
    missing = [p for p in primes.primes if p not in residues]
    if missing:
        raise ContractViolation(f"no residues for primes {missing}")
    columns = [_pad(np.asarray(residues[p]), length) for p in primes.primes]
    head = len(primes) - extra
    if head < 1:
        raise ContractViolation(f"{len(primes)} primes leave none after holding back {extra}")
    values = []
    for k in range(length):
        per_prime = [col[k] for col in columns]
        value = crt_reconstruct(per_prime, primes.primes)
        if extra and crt_reconstruct(per_prime[:head], primes.primes[:head]) != value:
            raise InternalConsistencyError(f"coefficient {k} changes when adding primes; bound too small")
        values.append(value)
    return values


def panel_total(side: int, runner: ResidueRunner = sequential_residues,
                primes: Optional[PrimeSet] = None) -> PanelPolynomial:
    if side < 1:
        raise ContractViolation(f"side must be >= 1, got {side}")
    length = max(side * side, 1)
    if side < 2:
        return PanelPolynomial(side=side, coeffs=[0] * length)
    primes = primes or prime_plan(side, scalar=False)
    coeffs = reconstruct(runner(side, primes, False), primes, length)
    return PanelPolynomial(side=side, coeffs=coeffs)


def gerrymander_polynomial(side: int, runner: ResidueRunner = sequential_residues,
                           primes: Optional[PrimeSet] = None) -> GerrymanderPolynomial:
    """g_{L,k} = p_{L,k} + p_{L,L²-k}."""
    return fold_panel(panel_total(side, runner, primes))


def fold_panel(panel: PanelPolynomial) -> GerrymanderPolynomial:
    n = panel.side * panel.side
    p = panel.coeffs + [0]
    coeffs = [0] * (n + 1)
    for k in range(1, n):
        coeffs[k] = p[k] + p[n - k]
    return GerrymanderPolynomial(side=panel.side, coeffs=coeffs)


def generalised_gerrymander(side: int, runner: ResidueRunner = sequential_residues) -> int:
    if side < 2:
        return 0
    return gerrymander_polynomial(side, runner).central


def gerrymander(side: int, runner: ResidueRunner = sequential_residues) -> int:
    """Equal-area splits of the 2L x 2L board."""
    value = generalised_gerrymander(2 * side, runner)
    return halve_central(value, 2 * side)


def halve_central(value: int, board: int) -> int:
    if value % 2:
        raise InternalConsistencyError(f"central coefficient for L={board} is odd: {value}")
    return value // 2


def partition_count(side: int, runner: ResidueRunner = sequential_residues,
                    primes: Optional[PrimeSet] = None) -> int:
    """G_L(1)/2 from the scalar sweep."""
    if side < 1:
        raise ContractViolation(f"side must be >= 1, got {side}")
    if side < 2:
        return 0
    primes = primes or prime_plan(side, scalar=True)
    residues = {p: np.array([int(np.asarray(r).sum()) % p]) for p, r in runner(side, primes, True).items()}
    return reconstruct(residues, primes, 1)[0]


def check_scalar_agreement(poly: GerrymanderPolynomial, scalar_total: int) -> None:
    if poly.total != 2 * scalar_total:
        raise InternalConsistencyError(
            f"L={poly.side}: polynomial total {poly.total} is not twice the scalar count {scalar_total}")


def unimodality_report(poly: GerrymanderPolynomial) -> UnimodalityReport:
    """Check g_k <= g_{k+1} up to the centre; an observation, not an assertion."""
    centre = (poly.side * poly.side) // 2
    for k in range(1, centre):
        if poly.coeffs[k] > poly.coeffs[k + 1]:
            return UnimodalityReport(side=poly.side, unimodal=False, first_violation=k)
    return UnimodalityReport(side=poly.side, unimodal=True)


def sandwich_check(side: int, runner: ResidueRunner = sequential_residues) -> SandwichReport:
    """Cycles of the (L-2)-board <= G_L(1)/2 <= cycles of the L-board, via the oracle."""
    lower = int(sum(brute_cycles(side - 2, side - 2))) if side > 2 else 0
    upper = int(sum(brute_cycles(side, side)))
    return SandwichReport(side=side, lower=lower, value=partition_count(side, runner), upper=upper)
