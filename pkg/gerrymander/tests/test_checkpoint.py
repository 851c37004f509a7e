import hashlib
import os
import struct
import tempfile
import unittest

import numpy as np

from gerrymander.errors import CheckpointMismatch
from gerrymander.lattice.checkpoint import CheckpointStore, decode, encode
from gerrymander.lattice.modarith import gen_primes
from gerrymander.lattice.transfer import (
    initial_table,
    panel_12_run,
    panel_34_run,
    reference_move,
    run_panel,
    sweep_column,
)

PRIMES = gen_primes(30, 2).primes


class TestCheckpoint(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.store = CheckpointStore(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_encode_decode_restores_table(self):
        run = panel_34_run(5, PRIMES[0])
        table = initial_table(run)
        sweep_column(table)
        restored = decode(encode(table, run), run)
        np.testing.assert_array_equal(restored.arena, table.arena)
        np.testing.assert_array_equal(restored.sap_total, table.sap_total)
        self.assertEqual(restored.column, 1)
        self.assertEqual(restored.seed_columns, 3)

    def test_only_column_boundaries(self):
        run = panel_12_run(4, PRIMES[0])
        table = initial_table(run)
        reference_move(table)
        with self.assertRaises(CheckpointMismatch):
            encode(table, run)

    def test_foreign_run_refused(self):
        run = panel_12_run(4, PRIMES[0])
        table = initial_table(run)
        sweep_column(table)
        blob = encode(table, run)
        for other in (panel_12_run(4, PRIMES[1]), panel_12_run(4, PRIMES[0], scalar=True)):
            with self.subTest(other=other.fingerprint()):
                with self.assertRaises(CheckpointMismatch):
                    decode(blob, other)

    def test_header_records_cell(self):
        run = panel_12_run(4, PRIMES[0])
        table = initial_table(run)
        sweep_column(table)
        blob = encode(table, run)
        column, cell = struct.unpack_from("<HH", blob, 6 + 8 + 6)
        self.assertEqual((column, cell), (1, 0))
        payload = bytearray(blob[:-32])
        struct.pack_into("<H", payload, 6 + 8 + 8, 2)
        with self.assertRaises(CheckpointMismatch):
            decode(bytes(payload) + hashlib.sha256(payload).digest(), run)

    def test_corruption_detected(self):

        run = panel_12_run(4, PRIMES[0])
        table = initial_table(run)
        sweep_column(table)
        blob = bytearray(encode(table, run))
        blob[20] ^= 0xFF
        with self.assertRaises(CheckpointMismatch):
            decode(bytes(blob), run)
        with self.assertRaises(CheckpointMismatch):
            decode(bytes(blob[:10]), run)

    def test_resume_matches_uninterrupted_run(self):
        """A run restarted from a saved column gives the same polynomial"""
        for run in (panel_12_run(5, PRIMES[0]), panel_34_run(5, PRIMES[0])):
            with self.subTest(run=run.name):
                expected = run_panel(run)
                table = initial_table(run)
                sweep_column(table)
                sweep_column(table)
                self.store.save(table, run)
                resumed = run_panel(run, self.store)
                np.testing.assert_array_equal(resumed, expected)
                self.assertFalse(os.path.exists(self.store.path_for(run)))

    def test_load_absent(self):
        self.assertIsNone(self.store.load(panel_12_run(3, PRIMES[0])))


if __name__ == "__main__":
    unittest.main()
