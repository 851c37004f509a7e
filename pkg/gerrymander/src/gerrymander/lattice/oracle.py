"""
Exhaustive ground truth at small sizes.

Cells are bits of a uint64 mask, cell (row, col) at bit row*cols + col with
row 0 at the bottom. Connectivity is checked by repeated 4-neighbour
dilation of a seed inside the region, vectorised over chunks of masks.
"""

import concurrent.futures
from threading import Lock
from typing import Callable, Dict

import numpy as np

from gerrymander.errors import BudgetError, ContractViolation

DEFAULT_MAX_CELLS = 16
HARD_MAX_CELLS = 25
CHUNK = 1 << 18

PANEL_TWO_CORNERS = 1
PANEL_ONE_CORNER = 2
PANEL_SIDE = 3
PANEL_INTERIOR = 4


class _Grid:
    """Bit constants of a rows x cols cell grid."""

    def __init__(self, rows: int, cols: int):
        self.rows, self.cols = rows, cols
        self.size = rows * cols
        full = (1 << self.size) - 1
        first = sum(1 << (r * cols) for r in range(rows))
        last = first << (cols - 1)
        self.full = np.uint64(full)
        self.not_first = np.uint64(full & ~first)
        self.not_last = np.uint64(full & ~last)
        self.one = np.uint64(1)
        self.row_shift = np.uint64(cols)
        bottom = (1 << cols) - 1
        top = bottom << (cols * (rows - 1))
        self.border = np.uint64(first | last | bottom | top)
        self.corners = np.uint64((1 << 0) | (1 << (cols - 1)) | (1 << (cols * (rows - 1))) | (1 << (self.size - 1)))
        self.south_west = np.uint64(1)
        windows = 0
        for r in range(rows - 1):
            for c in range(cols - 1):
                windows |= 1 << (r * cols + c)
        self.windows = np.uint64(windows)

    def dilate(self, seed: np.ndarray, region: np.ndarray) -> np.ndarray:
        """Grow seed inside region until stable."""
        reach = seed & region
        while True:
            grown = (reach
                     | ((reach << self.one) & self.not_first)
                     | ((reach >> self.one) & self.not_last)
                     | (reach << self.row_shift)
                     | (reach >> self.row_shift)) & region
            if np.array_equal(grown, reach):
                return reach
            reach = grown

    def connected(self, region: np.ndarray) -> np.ndarray:
        lowest = region & (~region + self.one)
        return self.dilate(lowest, region) == region

    def pinched(self, masks: np.ndarray) -> np.ndarray:
        """True where some 2x2 window holds a diagonal pair only (checkerboard)."""
        right = masks >> self.one
        up = masks >> self.row_shift
        diag = masks >> (self.row_shift + self.one)
        bad = ((masks & diag & ~right & ~up) | (right & up & ~masks & ~diag)) & self.windows
        return bad != 0


def popcount(values: np.ndarray) -> np.ndarray:
    raw = np.ascontiguousarray(values, dtype=np.uint64).view(np.uint8).reshape(-1, 8)
    return np.unpackbits(raw, axis=1).sum(axis=1).astype(np.int64)


def _check_budget(cells: int, allow_large: bool) -> None:
    limit = HARD_MAX_CELLS if allow_large else DEFAULT_MAX_CELLS
    if cells > limit:
        hint = "" if allow_large else " (pass allow_large for up to 25 cells)"
        raise BudgetError(f"exhaustive census over {cells} cells exceeds the {limit}-cell budget{hint}")


def _scan(cells: int, classify: Callable[[np.ndarray], Dict[int, np.ndarray]], labels: int,
          threads: int = 1) -> np.ndarray:
    """
    Run classify over all masks 1 .. 2^cells - 2 in chunks and tally.

    classify returns {label: areas of masks with that label}; the tally has
    shape (labels, cells + 1).
    """
    tally = np.zeros((labels, cells + 1), dtype=np.int64)
    top = (1 << cells) - 1
    if top < 2:
        return tally
    tally_lock = Lock()
    bounds = [(start, min(start + CHUNK, top)) for start in range(1, top, CHUNK)]

    def work(lo: int, hi: int) -> np.ndarray:
        part = np.zeros_like(tally)
        masks = np.arange(lo, hi, dtype=np.uint64)
        for label, areas in classify(masks).items():
            part[label] += np.bincount(areas, minlength=cells + 1)
        return part

    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, min(threads, len(bounds)))) as executor:
        future_to_chunk = {executor.submit(work, lo, hi): (lo, hi) for lo, hi in bounds}
        for future in concurrent.futures.as_completed(future_to_chunk):
            part = future.result()
            with tally_lock:
                tally += part
    return tally


def _two_region_masks(grid: _Grid, masks: np.ndarray) -> np.ndarray:
    return masks[grid.connected(masks) & grid.connected(masks ^ grid.full)]


def brute_partitions(side: int, allow_large: bool = False, threads: int = 1) -> np.ndarray:
    """
    Ordered two-region partitions of the L x L board, tallied by grey area.

    Both classes must be non-empty and edge-connected. Each unordered
    partition appears twice, once per colouring.

    Returns:
        int64 array of length L²+1; entry k is g_{L,k}
    """
    if side < 1:
        raise ContractViolation(f"side must be >= 1, got {side}")
    _check_budget(side * side, allow_large)
    grid = _Grid(side, side)

    def classify(masks):
        valid = _two_region_masks(grid, masks)
        return {0: popcount(valid)}

    return _scan(side * side, classify, 1, threads)[0]


def _panel_labels(grid: _Grid, valid: np.ndarray) -> np.ndarray:
    corners = popcount(valid & grid.corners)
    canonical = (corners < 2) | ((corners == 2) & ((valid & grid.south_west) != 0))
    touches = (valid & grid.border) != 0
    labels = np.where(corners == 2, PANEL_TWO_CORNERS,
                      np.where(corners == 1, PANEL_ONE_CORNER,
                               np.where(touches, PANEL_SIDE, PANEL_INTERIOR)))
    return np.where(canonical, labels, 0)


def panel_censuses(side: int, allow_large: bool = False, threads: int = 1) -> np.ndarray:
    """
    Canonical grey regions by corner/side contact and area.

    Of the two regions of a partition the grey one touches fewer corners;
    on a 2-2 tie it is the one holding the bottom-left corner. Row k of the
    result (k = 1..4) is the census of contact class k; row 0 is unused.
    """
    if side < 1:
        raise ContractViolation(f"side must be >= 1, got {side}")
    _check_budget(side * side, allow_large)
    grid = _Grid(side, side)

    def classify(masks):
        valid = _two_region_masks(grid, masks)
        labels = _panel_labels(grid, valid)
        areas = popcount(valid)
        return {panel: areas[labels == panel] for panel in range(1, 5)}

    return _scan(side * side, classify, 5, threads)


def brute_panel_census(side: int, panel: int, allow_large: bool = False, threads: int = 1) -> np.ndarray:
    if panel not in (1, 2, 3, 4):
        raise ContractViolation(f"panel must be 1..4, got {panel}")
    return panel_censuses(side, allow_large, threads)[panel]


def brute_cycles(rows: int, cols: int, allow_large: bool = False, threads: int = 1) -> np.ndarray:
    """
    Self-avoiding polygons inside a rows x cols cell rectangle, by enclosed area.

    A polygon is the boundary of a connected, hole-free cell set with no
    checkerboard 2x2 window.
    """
    if rows < 1 or cols < 1:
        raise ContractViolation(f"rectangle must be at least 1x1, got {rows}x{cols}")
    cells = rows * cols
    _check_budget(cells, allow_large)
    grid = _Grid(rows, cols)
    padded = _Grid(rows + 2, cols + 2)
    placement = [np.uint64(1 << ((r + 1) * (cols + 2) + c + 1)) for r in range(rows) for c in range(cols)]
    ring = np.uint64(int(padded.border))

    def classify(masks):
        keep = grid.connected(masks) & ~grid.pinched(masks)
        masks = masks[keep]
        embedded = np.zeros_like(masks)
        for bit, target in enumerate(placement):
            embedded |= np.where(((masks >> np.uint64(bit)) & grid.one) != 0, target, np.uint64(0))
        outside = padded.full & ~embedded
        hole_free = padded.dilate(np.full_like(outside, ring), outside) == outside
        return {0: popcount(masks[hole_free])}

    tally = _scan(cells, classify, 1, threads)[0]
    # the full rectangle is excluded by the scan range
    tally[cells] += 1
    return tally
