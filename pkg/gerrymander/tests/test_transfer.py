import unittest

import numpy as np
from pydantic import ValidationError

from gerrymander.errors import ContractViolation, InternalConsistencyError
from gerrymander.lattice.modarith import gen_primes
from gerrymander.lattice.signature import Signature
from gerrymander.lattice.transfer import (
    BLOCKED_TARGET,
    CLOSED_TARGET,
    UNBLOCKED_TARGET,
    PanelRun,
    Transition,
    add_polys,
    advance,
    compile_move,
    cell_transitions,
    estimate_bytes,
    initial_table,
    panel_12_run,
    panel_34_run,
    reference_move,
    run_panel_12,
    run_panel_34,
    run_scalar,
    sweep_column,
)

PRIME = gen_primes(30, 1).primes[0]
BIG_PRIME = gen_primes(62, 1).primes[0]


class TestCellTransitions(unittest.TestCase):

    def test_empty_pair_bulk(self):
        """Two empty states either stay empty or open a fresh arc pair"""
        moves = cell_transitions((0, 0, 0), 1)
        self.assertEqual(moves, [
            Transition(UNBLOCKED_TARGET, (0, 0, 0), 0),
            Transition(UNBLOCKED_TARGET, (0, 1, 2), 1),
        ])

    def test_closing_the_last_arc(self):
        moves = cell_transitions((1, 2), 0, final=True)
        self.assertEqual(moves, [
            Transition(UNBLOCKED_TARGET, (1, 2), 1),
            Transition(CLOSED_TARGET, None, 0),
        ])

    def test_premature_closure_is_discarded(self):
        moves = cell_transitions((1, 2, 1, 2), 0, final=True)
        self.assertEqual(moves, [Transition(UNBLOCKED_TARGET, (1, 2, 1, 2), 1)])

    def test_joining_two_lower_ends_relabels_partner(self):
        moves = cell_transitions((0, 1, 1, 2, 2), 1)
        self.assertEqual(moves, [
            Transition(UNBLOCKED_TARGET, (0, 1, 1, 2, 2), 1),
            Transition(BLOCKED_TARGET, (0, 3, 0, 1, 2), 0),
        ])

    def test_forbid_return_to_bottom(self):
        self.assertEqual(len(cell_transitions((0, 0), 0, final=True)), 2)
        self.assertEqual(cell_transitions((0, 0), 0, final=True, forbid_return=True),
                         [Transition(UNBLOCKED_TARGET, (0, 0), 0)])

    def test_blocked_vertex_takes_no_more_edges(self):
        self.assertEqual(cell_transitions((0, 3, 0), 0, final=True),
                         [Transition(UNBLOCKED_TARGET, (0, 0, 0), 0)])

    def test_rejected_sources(self):
        with self.assertRaises(InternalConsistencyError):
            cell_transitions((3, 0), 0)
        with self.assertRaises(ContractViolation):
            cell_transitions((0, 0, 0), 1, final=True)


class TestPanelRuns(unittest.TestCase):

    def test_run_templates(self):
        run = panel_12_run(5, PRIME)
        self.assertEqual((run.width, run.columns, run.capacity), (4, 4, 21))
        self.assertEqual(len(run.initial), 4)
        run = panel_34_run(5, PRIME)
        self.assertEqual((run.width, run.seed_columns, len(run.initial)), (3, 3, 6))
        self.assertEqual(panel_34_run(5, PRIME, scalar=True).capacity, 1)

    def test_template_flags_are_checked(self):
        data = panel_12_run(4, PRIME).model_dump()
        data["closure_weight"] = 1
        with self.assertRaises(ValidationError):
            PanelRun.model_validate(data)
        data = panel_34_run(4, PRIME).model_dump()
        data["seed_cycles"] = False
        with self.assertRaises(ValidationError):
            PanelRun.model_validate(data)
        self.assertNotIn("suppress_closure_in_extra_column", data)


    def test_estimate_bytes(self):
        # W = 2: 4 unblocked and 2 blocked rows
        self.assertEqual(estimate_bytes(2, 7), 3 * 6 * 7 * 8)

    def test_small_panels(self):
        self.assertEqual(run_panel_12(2, PRIME).tolist(), [0, 4, 2])
        self.assertEqual(run_panel_34(3, PRIME).tolist(), [0, 5, 4, 0])
        self.assertEqual(run_panel_34(2, PRIME).tolist(), [0])
        self.assertEqual(run_panel_12(1, PRIME).tolist(), [0])

    def test_side_three_panel_total(self):
        """p_3(q) = 9q + 12q² + 14q³ + 10q⁴ + 6q⁵ + 2q⁶"""
        total = add_polys(run_panel_12(3, PRIME), run_panel_34(3, PRIME), PRIME)
        self.assertEqual(total.tolist(), [0, 9, 12, 14, 10, 6, 2])

    def test_scalar_counts(self):
        expected = {2: 6, 3: 53, 4: 627, 5: 16213}
        for side, value in expected.items():
            with self.subTest(side=side):
                self.assertEqual(run_scalar(side, BIG_PRIME), value)

    def test_scalar_matches_polynomial_sum(self):
        for side in (4, 5):
            with self.subTest(side=side):
                poly = add_polys(run_panel_12(side, PRIME), run_panel_34(side, PRIME), PRIME)
                self.assertEqual(int(poly.sum()) % PRIME, run_scalar(side, PRIME))


class TestSweep(unittest.TestCase):

    def _compare_paths(self, run):
        reference, compiled = initial_table(run), initial_table(run)
        while reference.column < run.columns:
            p = compiled.next_pair
            reference_move(reference)
            advance(compiled, compile_move(compiled.width, p, compiled.forbid_return))
            np.testing.assert_array_equal(reference.arena, compiled.arena)
            np.testing.assert_array_equal(reference.sap_total, compiled.sap_total)
            self.assertEqual((reference.kink, reference.column), (compiled.kink, compiled.column))

    def test_reference_and_compiled_moves_agree(self):
        """Per-signature rules and compiled gathers give identical arenas after every move"""
        for side in (3, 4, 5):
            for build in (panel_12_run, panel_34_run):
                run = build(side, PRIME)
                with self.subTest(run=run.fingerprint()):
                    self._compare_paths(run)

    def test_reference_move_single_signature(self):
        table = initial_table(panel_12_run(3, PRIME))
        source = table.signature_at(int(np.flatnonzero(table.arena.any(axis=1))[0]))
        self.assertIsInstance(source, Signature)
        self.assertFalse(source.is_blocked)

    def test_blocked_rows_empty_at_column_boundary(self):
        table = initial_table(panel_12_run(5, PRIME))
        for _ in range(2):
            sweep_column(table)
            self.assertFalse(table.blocked.any())
            self.assertEqual(table.kink, table.width)

    def test_compiled_moves_are_cached(self):
        self.assertIs(compile_move(4, 2), compile_move(4, 2))
        self.assertIsNot(compile_move(4, 0, True), compile_move(4, 0, False))


if __name__ == "__main__":
    unittest.main()
