"""
Modular arithmetic over word-sized primes and Chinese remainder reconstruction.
"""

from functools import lru_cache
from math import prod
from typing import List, Sequence, Union

from pydantic import BaseModel, field_validator, model_validator

from gerrymander.errors import ContractViolation

SUPPORTED_WIDTHS = (30, 62)

# Deterministic Miller-Rabin witnesses, valid for every n < 3.3e24.
_WITNESSES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    for p in _WITNESSES:
        if n % p == 0:
            return n == p
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _WITNESSES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


class PrimeSet(BaseModel):
    """Distinct primes below 2^bit_width."""

    primes: List[int]
    bit_width: int

    @field_validator("bit_width")
    @classmethod
    def _width_supported(cls, value):
        if value not in SUPPORTED_WIDTHS:
            raise ValueError(f"bit width must be one of {SUPPORTED_WIDTHS}")
        return value

    @model_validator(mode="after")
    def _primes_valid(self):
        if len(set(self.primes)) != len(self.primes):
            raise ValueError("primes must be distinct")
        for p in self.primes:
            if p >= 2**self.bit_width or not is_prime(p):
                raise ValueError(f"{p} is not a prime below 2^{self.bit_width}")
        return self

    @property
    def modulus(self) -> int:
        return prod(self.primes)

    def __len__(self) -> int:
        return len(self.primes)

    def head(self, count: int) -> "PrimeSet":
        return PrimeSet(primes=self.primes[:count], bit_width=self.bit_width)


@lru_cache(maxsize=None)
def _descending_primes(bit_width: int, count: int) -> tuple:
    found = []
    candidate = 2**bit_width - 1
    while len(found) < count:
        if is_prime(candidate):
            found.append(candidate)
        candidate -= 2
    return tuple(found)


def gen_primes(bit_width: int, count: int, skip: int = 0) -> PrimeSet:
    """
    The largest primes below 2^bit_width, in descending order.

    Args:
        bit_width: 30 or 62
        count: number of primes wanted
        skip: number of largest primes to pass over first (for disjoint sets)

    Returns:
        PrimeSet
    """
    if count < 1:
        raise ContractViolation(f"gen_primes needs count >= 1, got {count}")
    if bit_width not in SUPPORTED_WIDTHS:
        raise ContractViolation(f"unsupported prime width {bit_width}")
    primes = _descending_primes(bit_width, skip + count)[skip:]
    return PrimeSet(primes=list(primes), bit_width=bit_width)


def primes_needed(log2_bound: int, bit_width: int) -> int:
    """Prime count whose product exceeds 2^log2_bound, with one prime of slack."""
    return -(-log2_bound // bit_width) + 1


def _check(a: int, b: int, p: int) -> None:
    if not (0 <= a < p and 0 <= b < p):
        raise ContractViolation(f"operands ({a}, {b}) not reduced mod {p}")


def addmod(a: int, b: int, p: int) -> int:
    _check(a, b, p)
    s = a + b
    return s - p if s >= p else s


def submod(a: int, b: int, p: int) -> int:
    _check(a, b, p)
    d = a - b
    return d + p if d < 0 else d


def mulmod(a: int, b: int, p: int) -> int:
    # Python ints give the double-width intermediate for free.
    _check(a, b, p)
    return a * b % p


def reduce(n: int, primes: Union[PrimeSet, Sequence[int]]) -> List[int]:
    plist = primes.primes if isinstance(primes, PrimeSet) else list(primes)
    return [n % p for p in plist]


def crt_reconstruct(residues: Sequence[int], primes: Union[PrimeSet, Sequence[int]]) -> int:
    """
    Unique non-negative integer below the product of primes with the given residues.

    Args:
        residues: residues[i] in [0, primes[i])
        primes: a PrimeSet or plain sequence of pairwise coprime moduli

    Returns:
        int
    """
    plist = primes.primes if isinstance(primes, PrimeSet) else list(primes)
    if len(residues) != len(plist):
        raise ContractViolation(f"{len(residues)} residues for {len(plist)} primes")
    value, modulus = 0, 1
    for r, p in zip(residues, plist):
        r = int(r)
        if not 0 <= r < p:
            raise ContractViolation(f"residue {r} not reduced mod {p}")
        t = (r - value) * pow(modulus, -1, p) % p
        value += modulus * t
        modulus *= p
    return value
