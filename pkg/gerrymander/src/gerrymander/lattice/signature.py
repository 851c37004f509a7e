"""
Transfer-matrix signatures and their Motzkin-path perfect hash.

A signature is the state string along the kinked boundary line: W horizontal
edges plus one vertex. Empty states map to level steps, lower arc ends to up
steps and upper arc ends to down steps, so every unblocked signature is a
Motzkin path of length W+1. A blocked signature drops its single Blocked state
(always at the kink) and is a Motzkin path of length W.

Paths are ranked lexicographically with level < up < down. The state codes
are chosen so that the code of a state equals the rank of its step.
"""

from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from gerrymander.errors import HashRangeError, SignatureError, ContractViolation

MAX_WIDTH = 30
BITS_PER_STATE = 2


class SigState(IntEnum):
    EMPTY = 0
    LOWER = 1
    UPPER = 2
    BLOCKED = 3


class Step(IntEnum):
    LEVEL = 0
    UP = 1
    DOWN = 2


_SYMBOLS = {SigState.EMPTY: "o", SigState.LOWER: "(", SigState.UPPER: ")", SigState.BLOCKED: "*"}


def pack_states(states: Sequence[int]) -> int:
    """Pack a state string into one integer word, 2 bits per state, position 0 lowest."""
    word = 0
    for pos, state in enumerate(states):
        word |= int(state) << (BITS_PER_STATE * pos)
    return word


def unpack_states(word: int, length: int) -> Tuple[int, ...]:
    return tuple((word >> (BITS_PER_STATE * pos)) & 0b11 for pos in range(length))


@dataclass(frozen=True)
class Signature:
    """
    Immutable signature value.

    Attributes:
        word: packed states (see pack_states)
        length: number of states, W+1
        kink_pos: position of the vertex state within the string
    """

    word: int
    length: int
    kink_pos: int

    @classmethod
    def from_states(cls, states: Iterable[int], kink_pos: Optional[int] = None) -> "Signature":
        states = tuple(int(s) for s in states)
        if kink_pos is None:
            kink_pos = len(states) - 1
        sig = cls(pack_states(states), len(states), kink_pos)
        validate(sig)
        return sig

    @classmethod
    def parse(cls, text: str, kink_pos: Optional[int] = None) -> "Signature":
        """Build a signature from symbols, e.g. "o(())" or "(*)"; position 0 first."""
        lookup = {symbol: state for state, symbol in _SYMBOLS.items()}
        try:
            states = [lookup[ch] for ch in text.replace(" ", "")]
        except KeyError as e:
            raise SignatureError(f"unknown signature symbol {e.args[0]!r}")
        if kink_pos is None and SigState.BLOCKED in states:
            kink_pos = states.index(SigState.BLOCKED)
        return cls.from_states(states, kink_pos)

    @property
    def width(self) -> int:
        return self.length - 1

    @property
    def states(self) -> Tuple[int, ...]:
        return unpack_states(self.word, self.length)

    @property
    def is_blocked(self) -> bool:
        return SigState.BLOCKED in self.states

    def __str__(self) -> str:
        return "".join(_SYMBOLS[SigState(s)] for s in self.states)


def validate(sig: Signature) -> None:
    """Raise SignatureError unless arcs balance and Blocked appears at most once, at the kink."""
    if sig.length < 1 or sig.length - 1 > MAX_WIDTH:
        raise SignatureError(f"signature width {sig.length - 1} outside 0..{MAX_WIDTH}")
    if not 0 <= sig.kink_pos < sig.length:
        raise SignatureError(f"kink position {sig.kink_pos} outside 0..{sig.length - 1}")
    depth = 0
    blocked = 0
    for pos, state in enumerate(sig.states):
        if state == SigState.BLOCKED:
            blocked += 1
            if pos != sig.kink_pos:
                raise SignatureError(f"blocked state at edge position {pos} (kink at {sig.kink_pos})")
        elif state == SigState.LOWER:
            depth += 1
        elif state == SigState.UPPER:
            depth -= 1
            if depth < 0:
                raise SignatureError(f"unmatched upper arc end at position {pos} in {sig}")
    if blocked > 1:
        raise SignatureError(f"{blocked} blocked states in {sig}")
    if depth != 0:
        raise SignatureError(f"{depth} unmatched lower arc end(s) in {sig}")


@lru_cache(maxsize=None)
def motzkin_count(n: int) -> int:
    """Number of n-step Motzkin paths."""
    if n < 0:
        raise ContractViolation(f"motzkin_count needs n >= 0, got {n}")
    if n < 2:
        return 1
    return motzkin_count(n - 1) + sum(motzkin_count(k) * motzkin_count(n - 2 - k) for k in range(n - 1))


@lru_cache(maxsize=None)
def path_table(n: int) -> np.ndarray:
    """
    Completion counts T[r, h]: ways to finish r remaining steps from height h at height 0.

    Shape (n+1, n+2); entries fit int64 for n <= MAX_WIDTH + 1.
    """
    table = np.zeros((n + 1, n + 2), dtype=np.int64)
    table[0, 0] = 1
    for r in range(1, n + 1):
        table[r, : n + 1] = table[r - 1, : n + 1] + table[r - 1, 1 : n + 2]
        table[r, 1 : n + 1] += table[r - 1, : n]
    table.flags.writeable = False
    return table


def to_motzkin(sig: Signature) -> Tuple[Step, ...]:
    """Motzkin step sequence of a signature; a Blocked state at the kink is dropped."""
    validate(sig)
    return tuple(Step(s) for s in sig.states if s != SigState.BLOCKED)


def rank_path(steps: Sequence[int]) -> int:
    """0-based lexicographic rank of a Motzkin path among all paths of its length."""
    n = len(steps)
    table = path_table(n)
    rank = 0
    height = 0
    for i, step in enumerate(steps):
        remaining = n - i - 1
        if step >= Step.UP:
            rank += int(table[remaining, height])
        if step == Step.DOWN:
            rank += int(table[remaining, height + 1])
        height += (0, 1, -1)[step]
        if height < 0:
            raise SignatureError("path dips below zero")
    if height != 0:
        raise SignatureError("path ends above zero")
    return rank


def unrank_path(rank: int, n: int) -> Tuple[int, ...]:
    table = path_table(n)
    steps = []
    height = 0
    for i in range(n):
        remaining = n - i - 1
        level = int(table[remaining, height])
        if rank < level:
            steps.append(Step.LEVEL)
            continue
        rank -= level
        up = int(table[remaining, height + 1])
        if rank < up:
            steps.append(Step.UP)
            height += 1
            continue
        rank -= up
        steps.append(Step.DOWN)
        height -= 1
    return tuple(steps)


def rank_paths(paths: np.ndarray) -> np.ndarray:
    """Vectorised rank_path over the rows of an (count, n) array of step codes."""
    paths = np.asarray(paths, dtype=np.int64)
    count, n = paths.shape
    table = path_table(n)
    delta = np.array([0, 1, -1], dtype=np.int64)[paths]
    heights = np.zeros((count, n), dtype=np.int64)
    if n > 1:
        heights[:, 1:] = np.cumsum(delta, axis=1)[:, :-1]
    remaining = np.arange(n - 1, -1, -1, dtype=np.int64)[None, :]
    level_part = np.where(paths >= Step.UP, table[remaining, heights], 0)
    up_part = np.where(paths == Step.DOWN, table[remaining, np.minimum(heights + 1, n + 1)], 0)
    return (level_part + up_part).sum(axis=1)


@lru_cache(maxsize=64)
def all_paths(n: int) -> np.ndarray:
    """All n-step Motzkin paths as a read-only (M_n, n) uint8 array, in rank order."""
    prefixes = np.zeros((1, 0), dtype=np.uint8)
    heights = np.zeros(1, dtype=np.int64)
    for i in range(n):
        remaining = n - i - 1
        grown = np.repeat(prefixes, 3, axis=0)
        steps = np.tile(np.arange(3, dtype=np.uint8), len(prefixes))
        new_heights = np.repeat(heights, 3) + np.array([0, 1, -1])[steps]
        keep = (new_heights >= 0) & (new_heights <= remaining)
        prefixes = np.concatenate([grown, steps[:, None]], axis=1)[keep]
        heights = new_heights[keep]
    prefixes.flags.writeable = False
    return prefixes


def hash_unblocked(sig: Signature) -> int:
    """Perfect hash of an unblocked signature onto 1..M_{W+1}."""
    validate(sig)
    states = sig.states
    if SigState.BLOCKED in states:
        raise ContractViolation(f"hash_unblocked given blocked signature {sig}")
    return rank_path(states) + 1


def hash_blocked(sig: Signature) -> int:
    """Perfect hash of a blocked signature onto 1..M_W; the kink position is not encoded."""
    validate(sig)
    states = sig.states
    if states.count(SigState.BLOCKED) != 1 or states[sig.kink_pos] != SigState.BLOCKED:
        raise ContractViolation(f"hash_blocked needs one blocked state at the kink, got {sig}")
    return rank_path(to_motzkin(sig)) + 1


def unhash_unblocked(index: int, width: int, kink_pos: Optional[int] = None) -> Signature:
    size = motzkin_count(width + 1)
    if not 1 <= index <= size:
        raise HashRangeError(f"unblocked index {index} outside 1..{size} for W={width}")
    return Signature.from_states(unrank_path(index - 1, width + 1), width if kink_pos is None else kink_pos)


def unhash_blocked(index: int, width: int, kink_pos: int) -> Signature:
    size = motzkin_count(width)
    if not 1 <= index <= size:
        raise HashRangeError(f"blocked index {index} outside 1..{size} for W={width}")
    steps = list(unrank_path(index - 1, width))
    steps.insert(kink_pos, SigState.BLOCKED)
    return Signature.from_states(steps, kink_pos)


def match_right(states: Sequence[int], pos: int) -> int:
    """Position of the upper arc end matching the lower arc end at pos."""
    depth = 0
    for i in range(pos, len(states)):
        if states[i] == SigState.LOWER:
            depth += 1
        elif states[i] == SigState.UPPER:
            depth -= 1
            if depth == 0:
                return i
    raise SignatureError(f"no partner for lower arc end at {pos}")


def match_left(states: Sequence[int], pos: int) -> int:
    """Position of the lower arc end matching the upper arc end at pos."""
    depth = 0
    for i in range(pos, -1, -1):
        if states[i] == SigState.UPPER:
            depth += 1
        elif states[i] == SigState.LOWER:
            depth -= 1
            if depth == 0:
                return i
    raise SignatureError(f"no partner for upper arc end at {pos}")
