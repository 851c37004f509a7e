"""
Transfer-matrix kernel for counting self-avoiding polygons by area.

The boundary line sweeps a W-row rectangle column by column, top to bottom
within a column. Counts live in one arena per run: rows [0, Mu) hold the
unblocked signatures (ranked Motzkin paths of length W+1), rows [Mu, Mu+Mb)
the blocked ones (paths of length W with the Blocked state at the kink).
Each row is an area polynomial of fixed capacity stored as residues mod the
run's prime; scalar runs use capacity 1.

Two ways to apply a cell move are provided:
    - apply_cell_update / apply_final_cell_update: per-signature, straight
      from the update rules, into a staging arena (reference path).
    - advance: the same rules compiled once per (W, p) into numpy gather
      slots and applied to the whole arena at once (production path).
"""

import time
from dataclasses import dataclass, field
from threading import Lock
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from pydantic import BaseModel, model_validator

from gerrymander.errors import ContractViolation, InternalConsistencyError
from gerrymander.lattice.signature import (
    SigState,
    Signature,
    all_paths,
    hash_blocked,
    hash_unblocked,
    match_left,
    match_right,
    motzkin_count,
    rank_paths,
    unhash_blocked,
    unhash_unblocked,
)

EMPTY, LOWER, UPPER, BLOCKED = (int(s) for s in SigState)
_DEGREE = (0, 1, 1, 2)
_ARC = (LOWER, UPPER)

UNBLOCKED_TARGET = "unblocked"
BLOCKED_TARGET = "blocked"
CLOSED_TARGET = "closed"


class Transition(NamedTuple):
    kind: str
    states: Optional[Tuple[int, ...]]
    shift: int


def _area_parity(states, p: int) -> int:
    return sum(1 for s in states[: p + 1] if s in _ARC) & 1


def cell_transitions(states: Tuple[int, ...], p: int, final: bool = False,
                     forbid_return: bool = False) -> List[Transition]:
    """
    Targets reached from one source signature when the cell at pair (p, p+1) is added.

    Position p holds the edge left of the new cell's bottom-left corner and
    position p+1 the kink vertex at its top-left corner. A bulk move decides
    the cell's left edge g and top edge; the final move (p == 0) also decides
    the bottom boundary edge. Each transition carries its area shift: 1 when
    the new cell lies inside the polygon.

    Args:
        states: source state string, kink at p+1
        p: lower position of the update pair
        final: True for the column-completing move at the bottom
        forbid_return: refuse to (re)occupy the bottom edge once it is empty

    Returns:
        List of Transition; closures have kind CLOSED_TARGET and no states.
    """
    e, v = states[p], states[p + 1]
    if e == BLOCKED:
        raise InternalConsistencyError(f"blocked state at edge position {p}")
    if final and p != 0:
        raise ContractViolation("the final move acts on pair (0, 1)")
    dv = _DEGREE[v]
    parity = 0 if final else _area_parity(states, p)
    out = []
    for g in (0, 1):
        if dv + g > 2:
            continue
        if final:
            h = ((e != EMPTY) + g) & 1
            if forbid_return and e == EMPTY and h:
                continue
            shift = h
        else:
            shift = parity ^ g
        new = list(states)
        if g and e in _ARC and v in _ARC:
            if e == LOWER and v == UPPER:
                new[p] = new[p + 1] = EMPTY
                if any(new):
                    continue
                out.append(Transition(CLOSED_TARGET, None, shift))
                continue
            if e == LOWER and v == LOWER:
                new[match_right(states, p + 1)] = LOWER
            elif e == UPPER and v == UPPER:
                new[match_left(states, p)] = UPPER
            new[p], new[p + 1] = (EMPTY if final else BLOCKED), EMPTY
        elif e in _ARC and v in _ARC:
            pass
        elif e in _ARC:
            if g:
                new[p], new[p + 1] = (EMPTY if final else BLOCKED), e
            else:
                new[p], new[p + 1] = e, EMPTY
        elif v in _ARC:
            new[p], new[p + 1] = (v, EMPTY) if g else (EMPTY, v)
        else:
            new[p], new[p + 1] = (LOWER, UPPER) if g else (EMPTY, EMPTY)
        kind = BLOCKED_TARGET if new[p] == BLOCKED else UNBLOCKED_TARGET
        out.append(Transition(kind, tuple(new), shift))
    return out


class InitialWeight(BaseModel):
    """Weight factor * q^degree on the signature with arc ends at lower and upper."""

    lower: int
    upper: int
    factor: int
    degree: int


class PanelRun(BaseModel):
    """
    One enumeration pass over a W x (columns+1) rectangle.

    Column 0 is encoded by the initial weights; `columns` further columns are
    swept. Two templates exist, built by panel_12_run and panel_34_run.
    """

    name: str
    side: int
    width: int
    columns: int
    initial: List[InitialWeight]
    forbid_return_to_bottom: bool
    seed_cycles: bool
    seed_columns: int = 0
    closure_weight: int
    count_initial_signatures_at_end: bool
    prime: int
    scalar: bool = False

    @model_validator(mode="after")
    def _matches_template(self):
        if self.name == "panel_12":
            ok = (self.forbid_return_to_bottom and not self.seed_cycles
                  and self.count_initial_signatures_at_end and self.closure_weight == 2)
        elif self.name == "panel_34":
            ok = (not self.forbid_return_to_bottom and self.seed_cycles
                  and not self.count_initial_signatures_at_end and self.closure_weight == 1)
        else:
            ok = False
        if not ok:
            raise ValueError(f"flags of run {self.name!r} match neither panel template")
        return self

    @property
    def capacity(self) -> int:
        """Coefficient slots per signature: 1 in scalar mode, else max area + 1."""
        if self.scalar:
            return 1
        return self.width * (self.columns + 1) + 1

    def fingerprint(self) -> str:
        return f"{self.name}:L={self.side}:W={self.width}:n={self.columns}:p={self.prime}:scalar={int(self.scalar)}"


def panel_12_run(side: int, prime: int, scalar: bool = False) -> PanelRun:
    """Run counting the one- and two-corner grey regions (weights 2 and 4)."""
    width = side - 1
    return PanelRun(
        name="panel_12", side=side, width=width, columns=side - 1,
        initial=[InitialWeight(lower=0, upper=k, factor=2, degree=k) for k in range(1, width + 1)],
        forbid_return_to_bottom=True, seed_cycles=False, closure_weight=2,
        count_initial_signatures_at_end=True, prime=prime, scalar=scalar,
    )


def panel_34_run(side: int, prime: int, scalar: bool = False) -> PanelRun:
    """Run counting the side-touching and interior grey regions (weights 4 and 1)."""
    width = side - 2
    return PanelRun(
        name="panel_34", side=side, width=width, columns=side - 1,
        initial=[InitialWeight(lower=j, upper=k, factor=4, degree=k - j)
                 for j in range(width + 1) for k in range(j + 1, width + 1)],
        forbid_return_to_bottom=False, seed_cycles=True, seed_columns=side - 2, closure_weight=1,
        count_initial_signatures_at_end=False, prime=prime, scalar=scalar,
    )


def estimate_bytes(width: int, capacity: int) -> int:
    """Resident size of one run: arena, its double buffer and one gather temporary."""
    rows = motzkin_count(width + 1) + motzkin_count(width)
    return 3 * rows * capacity * 8


@dataclass
class CountTable:
    """Per-run count arena plus sweep position."""

    width: int
    capacity: int
    prime: int
    arena: np.ndarray
    sap_total: np.ndarray
    kink: int
    column: int = 0
    cell: int = 0
    forbid_return: bool = False
    closure_weight: int = 1
    seed_columns: int = 0
    staging: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def empty(cls, width: int, capacity: int, prime: int, **rules) -> "CountTable":
        rows = motzkin_count(width + 1) + motzkin_count(width)
        return cls(width=width, capacity=capacity, prime=prime,
                   arena=np.zeros((rows, capacity), dtype=np.int64),
                   sap_total=np.zeros(capacity, dtype=np.int64), kink=width, **rules)

    @property
    def unblocked_rows(self) -> int:
        return motzkin_count(self.width + 1)

    @property
    def unblocked(self) -> np.ndarray:
        return self.arena[: self.unblocked_rows]

    @property
    def blocked(self) -> np.ndarray:
        return self.arena[self.unblocked_rows:]

    @property
    def next_pair(self) -> int:
        return self.kink - 1

    def row_of(self, sig: Signature) -> int:
        if sig.is_blocked:
            return self.unblocked_rows + hash_blocked(sig) - 1
        return hash_unblocked(sig) - 1

    def signature_at(self, row: int) -> Signature:
        mu = self.unblocked_rows
        if row < mu:
            return unhash_unblocked(row + 1, self.width, self.kink)
        return unhash_blocked(row - mu + 1, self.width, self.kink)

    def seeding(self) -> bool:
        return 1 <= self.column + 1 <= self.seed_columns


def _shifted(poly: np.ndarray, shift: int) -> np.ndarray:
    if not shift or poly.shape[-1] == 1:
        return poly
    out = np.zeros_like(poly)
    out[..., 1:] = poly[..., :-1]
    return out


def _seed_row(width: int, p: int) -> int:
    states = [EMPTY] * (width + 1)
    states[p], states[p + 1] = LOWER, UPPER
    return hash_unblocked(Signature.from_states(states, p)) - 1


def _seed(table: CountTable, target: np.ndarray, p: int) -> None:
    """Start a fresh polygon whose first cell is the one being added."""
    row = _seed_row(table.width, p)
    slot = 1 if table.capacity > 1 else 0
    target[row, slot] = (target[row, slot] + 1) % table.prime


def _add_closure(table: CountTable, poly: np.ndarray) -> None:
    for _ in range(table.closure_weight):
        table.sap_total = (table.sap_total + poly) % table.prime


def begin_move(table: CountTable) -> None:
    """Open a staging arena for the reference path."""
    table.staging = np.zeros_like(table.arena)
    if table.seeding():
        _seed(table, table.staging, table.next_pair)


def _apply(table: CountTable, source: Signature, final: bool) -> None:
    p = table.next_pair
    if p < 0:
        raise ContractViolation("no cell left in this column")
    if (p == 0) != final:
        raise ContractViolation(f"pair ({p}, {p + 1}) needs the {'final' if p == 0 else 'bulk'} update")
    if source.kink_pos != table.kink:
        raise ContractViolation(f"source kink {source.kink_pos} differs from table kink {table.kink}")
    if table.staging is None:
        begin_move(table)
    count = table.arena[table.row_of(source)]
    if not count.any():
        return
    for move in cell_transitions(source.states, p, final, table.forbid_return):
        poly = _shifted(count, move.shift)
        if move.kind == CLOSED_TARGET:
            _add_closure(table, poly)
            continue
        kink = p if move.kind == BLOCKED_TARGET or not final else table.width
        row = table.row_of(Signature.from_states(move.states, kink))
        table.staging[row] = (table.staging[row] + poly) % table.prime


def apply_cell_update(table: CountTable, source: Signature) -> CountTable:
    """Bulk cell update for one source signature (reference path)."""
    _apply(table, source, final=False)
    return table


def apply_final_cell_update(table: CountTable, source: Signature) -> CountTable:
    """Column-completing cell update for one source signature (reference path)."""
    _apply(table, source, final=True)
    return table


def commit_move(table: CountTable) -> CountTable:
    """Swap the staging arena in and advance the kink; zero blocked rows at column end."""
    if table.staging is None:
        begin_move(table)
    final = table.next_pair == 0
    table.arena = table.staging
    table.staging = None
    _advance_position(table, final)
    return table


def _advance_position(table: CountTable, final: bool) -> None:
    if final:
        table.arena[table.unblocked_rows:] = 0
        table.kink = table.width
        table.cell = 0
        table.column += 1
    else:
        table.kink -= 1
        table.cell += 1


def reference_move(table: CountTable) -> CountTable:
    """Apply one full cell move through the per-signature rules."""
    final = table.next_pair == 0
    begin_move(table)
    for row in np.flatnonzero(table.arena.any(axis=1)):
        source = table.signature_at(int(row))
        if final:
            apply_final_cell_update(table, source)
        else:
            apply_cell_update(table, source)
    return commit_move(table)


@dataclass
class CompiledMove:
    """Gather slots for one (W, p) move; targets are unique within a slot."""

    slots: List[Tuple[np.ndarray, np.ndarray, np.ndarray]]
    closures: List[Tuple[int, int]]


_compiled: Dict[tuple, CompiledMove] = {}
_compiled_lock = Lock()


def _source_signatures(width: int, kink: int):
    for row, path in enumerate(all_paths(width + 1).tolist()):
        yield row, tuple(path)
    mu = motzkin_count(width + 1)
    for row, path in enumerate(all_paths(width).tolist()):
        yield mu + row, tuple(path[:kink]) + (BLOCKED,) + tuple(path[kink:])


def compile_move(width: int, p: int, forbid_return: bool = False) -> CompiledMove:
    """Compile the rules of the move at pair (p, p+1) for every source row; cached."""
    final = p == 0
    key = (width, p, final and forbid_return)
    with _compiled_lock:
        cached = _compiled.get(key)
        if cached is not None:
            return cached
        sources, shifts, closures = [], [], []
        unblocked_targets, blocked_targets = [], []
        for row, states in _source_signatures(width, p + 1):
            for move in cell_transitions(states, p, final, forbid_return):
                if move.kind == CLOSED_TARGET:
                    closures.append((row, move.shift))
                    continue
                sources.append(row)
                shifts.append(move.shift)
                if move.kind == BLOCKED_TARGET:
                    blocked_targets.append((len(sources) - 1, move.states[:p] + move.states[p + 1:]))
                else:
                    unblocked_targets.append((len(sources) - 1, move.states))
        targets = np.empty(len(sources), dtype=np.int64)
        if unblocked_targets:
            idx, paths = zip(*unblocked_targets)
            targets[list(idx)] = rank_paths(np.array(paths, dtype=np.int64))
        if blocked_targets:
            idx, paths = zip(*blocked_targets)
            ranked = rank_paths(np.array(paths, dtype=np.int64).reshape(len(idx), width))
            targets[list(idx)] = ranked + motzkin_count(width + 1)
        compiled = CompiledMove(slots=_pack_slots(np.array(sources, dtype=np.int64), targets,
                                                  np.array(shifts, dtype=bool)),
                                closures=closures)
        _compiled[key] = compiled
        return compiled


def _pack_slots(sources: np.ndarray, targets: np.ndarray, shifts: np.ndarray):
    """Split contributions so that no target repeats within a slot."""
    if len(targets) == 0:
        return []
    order = np.argsort(targets, kind="stable")
    sorted_targets = targets[order]
    starts = np.r_[0, np.flatnonzero(np.diff(sorted_targets)) + 1]
    run_start = np.repeat(starts, np.diff(np.r_[starts, len(sorted_targets)]))
    occurrence = np.empty_like(order)
    occurrence[order] = np.arange(len(order)) - run_start
    slots = []
    for k in range(int(occurrence.max()) + 1):
        pick = occurrence == k
        slots.append((sources[pick], targets[pick], shifts[pick]))
    return slots


def advance(table: CountTable, compiled: CompiledMove, scratch: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Apply one compiled cell move to the whole arena.

    Returns the previous arena, reusable as scratch for the next move.
    """
    p = table.next_pair
    new = scratch if scratch is not None else np.empty_like(table.arena)
    new.fill(0)
    prime = table.prime
    if table.seeding():
        _seed(table, new, p)
    for sources, targets, shifts in compiled.slots:
        contrib = table.arena[sources]
        if table.capacity > 1 and shifts.any():
            moved = contrib[shifts]
            contrib[shifts, 1:] = moved[:, :-1]
            contrib[shifts, 0] = 0
        new[targets] = (new[targets] + contrib) % prime
    for row, shift in compiled.closures:
        _add_closure(table, _shifted(table.arena[row], shift))
    old = table.arena
    table.arena = new
    _advance_position(table, p == 0)
    return old


def sweep_column(table: CountTable) -> CountTable:
    """Add one full column: W-1 bulk moves then the final move."""
    scratch = None
    while True:
        p = table.next_pair
        compiled = compile_move(table.width, p, table.forbid_return)
        scratch = advance(table, compiled, scratch)
        if p == 0:
            return table


def initial_table(run: PanelRun) -> CountTable:
    table = CountTable.empty(run.width, run.capacity, run.prime,
                             forbid_return=run.forbid_return_to_bottom,
                             closure_weight=run.closure_weight,
                             seed_columns=run.seed_columns if run.seed_cycles else 0)
    for weight in run.initial:
        slot = weight.degree if run.capacity > 1 else 0
        table.arena[_initial_row(run.width, weight), slot] = weight.factor % run.prime
    return table


def _initial_row(width: int, weight: InitialWeight) -> int:
    states = [EMPTY] * (width + 1)
    states[weight.lower], states[weight.upper] = LOWER, UPPER
    return hash_unblocked(Signature.from_states(states)) - 1


def run_panel(run: PanelRun, checkpoint=None, verbose: bool = False) -> np.ndarray:
    """
    Execute a panel run and return the polygon polynomial mod run.prime.

    Args:
        run: the PanelRun template instance
        checkpoint: optional CheckpointStore; the table is saved after every
            column and a compatible saved table is resumed from
        verbose: print per-column progress

    Returns:
        int64 array of length run.capacity (coefficient k = area k)
    """
    table = checkpoint.load(run) if checkpoint is not None else None
    if table is None:
        table = initial_table(run)
    elif verbose:
        print(f"🔄 {run.name} L={run.side}: resuming after column {table.column}")
    started = time.time()
    while table.column < run.columns:
        sweep_column(table)
        if checkpoint is not None:
            checkpoint.save(table, run)
        if verbose:
            print(f"🔄 {run.name} L={run.side} p={run.prime}: column {table.column}/{run.columns} "
                  f"({time.time() - started:.1f}s)")
    total = table.sap_total.copy()
    if run.count_initial_signatures_at_end:
        for weight in run.initial:
            total = (total + table.unblocked[_initial_row(run.width, weight)]) % run.prime
    if checkpoint is not None:
        checkpoint.discard(run)
    return total


def run_panel_12(side: int, prime: int, scalar: bool = False, checkpoint=None, verbose: bool = False) -> np.ndarray:
    if side < 2:
        return np.zeros(1, dtype=np.int64)
    return run_panel(panel_12_run(side, prime, scalar), checkpoint, verbose)


def run_panel_34(side: int, prime: int, scalar: bool = False, checkpoint=None, verbose: bool = False) -> np.ndarray:
    if side < 3:
        return np.zeros(1, dtype=np.int64)
    return run_panel(panel_34_run(side, prime, scalar), checkpoint, verbose)


def run_scalar(side: int, prime: int, checkpoint=None, verbose: bool = False) -> int:
    """Both panel runs at q = 1, summed mod prime."""
    a = run_panel_12(side, prime, True, checkpoint, verbose)
    b = run_panel_34(side, prime, True, checkpoint, verbose)
    return int((int(a.sum()) + int(b.sum())) % prime)


def add_polys(a: np.ndarray, b: np.ndarray, prime: int) -> np.ndarray:
    """Sum of two residue polynomials of possibly different lengths."""
    out = np.zeros(max(len(a), len(b)), dtype=np.int64)
    out[: len(a)] += a
    out[: len(b)] = (out[: len(b)] + b) % prime
    return out
