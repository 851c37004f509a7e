import unittest

import numpy as np

from gerrymander.errors import ContractViolation, HashRangeError, SignatureError
from gerrymander.lattice.signature import (
    SigState,
    Signature,
    Step,
    all_paths,
    hash_blocked,
    hash_unblocked,
    match_left,
    match_right,
    motzkin_count,
    pack_states,
    rank_path,
    rank_paths,
    to_motzkin,
    unhash_blocked,
    unhash_unblocked,
    unpack_states,
)


class TestSignature(unittest.TestCase):

    def test_motzkin_counts(self):
        """Motzkin numbers size the two hash ranges"""
        expected = [1, 1, 2, 4, 9, 21, 51, 127, 323, 835, 2188]
        for n, value in enumerate(expected):
            with self.subTest(n=n):
                self.assertEqual(motzkin_count(n), value)

    def test_parse_and_render(self):
        for text in ["o(())", "()o", "(*)", "oo"]:
            with self.subTest(text=text):
                self.assertEqual(str(Signature.parse(text)), text)
        sig = Signature.parse("(*)")
        self.assertTrue(sig.is_blocked)
        self.assertEqual(sig.kink_pos, 1)
        self.assertEqual(sig.width, 2)

    def test_pack_unpack(self):
        states = (SigState.LOWER, SigState.EMPTY, SigState.UPPER, SigState.BLOCKED)
        self.assertEqual(unpack_states(pack_states(states), 4), tuple(int(s) for s in states))
        self.assertEqual(pack_states([1, 2]), 0b1001)

    def test_invalid_signatures(self):
        """Unbalanced arcs and misplaced blocked states are rejected"""
        cases = [")(", "((", "(()", "o)"]
        for text in cases:
            with self.subTest(text=text):
                with self.assertRaises(SignatureError):
                    Signature.parse(text)
        with self.assertRaises(SignatureError):
            Signature.parse("(*)", kink_pos=0)
        with self.assertRaises(SignatureError):
            Signature.parse("x()")

    def test_lexicographic_rank(self):
        """Level < up < down orders the three-step paths"""
        order = ["ooo", "o()", "(o)", "()o"]
        for rank, text in enumerate(order):
            with self.subTest(text=text):
                self.assertEqual(hash_unblocked(Signature.parse(text)), rank + 1)

    def test_blocked_hash_ignores_blocked_state(self):
        sig = Signature.parse("(*)")
        self.assertEqual(to_motzkin(sig), (Step.UP, Step.DOWN))
        self.assertEqual(hash_blocked(sig), 2)
        self.assertEqual(unhash_blocked(2, 2, 1), sig)

    def test_hash_is_a_bijection(self):
        """Every index 1..M_{W+1} decodes to a distinct signature that hashes back to it"""
        for width in range(0, 6):
            size = motzkin_count(width + 1)
            seen = set()
            for index in range(1, size + 1):
                sig = unhash_unblocked(index, width)
                self.assertEqual(hash_unblocked(sig), index)
                seen.add(sig.word)
            self.assertEqual(len(seen), size)

    def test_hash_range_errors(self):
        with self.assertRaises(HashRangeError):
            unhash_unblocked(0, 2)
        with self.assertRaises(HashRangeError):
            unhash_unblocked(motzkin_count(3) + 1, 2)
        with self.assertRaises(HashRangeError):
            unhash_blocked(motzkin_count(2) + 1, 2, 1)

    def test_hash_kind_mismatch(self):
        with self.assertRaises(ContractViolation):
            hash_unblocked(Signature.parse("(*)"))
        with self.assertRaises(ContractViolation):
            hash_blocked(Signature.parse("()o"))

    def test_all_paths_in_rank_order(self):
        for n in range(0, 9):
            with self.subTest(n=n):
                paths = all_paths(n)
                self.assertEqual(paths.shape, (motzkin_count(n), n))
                if n:
                    np.testing.assert_array_equal(rank_paths(paths), np.arange(motzkin_count(n)))

    def test_vectorised_rank_matches_scalar(self):
        paths = all_paths(7)
        ranks = rank_paths(paths)
        for row in (0, 5, 50, len(paths) - 1):
            self.assertEqual(int(ranks[row]), rank_path(tuple(int(s) for s in paths[row])))

    def test_arc_partners(self):
        states = (SigState.LOWER, SigState.LOWER, SigState.UPPER, SigState.EMPTY, SigState.UPPER)
        self.assertEqual(match_right(states, 0), 4)
        self.assertEqual(match_right(states, 1), 2)
        self.assertEqual(match_left(states, 4), 0)
        self.assertEqual(match_left(states, 2), 1)


if __name__ == "__main__":
    unittest.main()
