import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hpnarm.qtable import (
    FLAG_AUGMENTED,
    FLAG_TRAINED,
    MAGIC,
    ActionSpec,
    BadMagicError,
    ChecksumError,
    HyperParams,
    QTable,
    QTableIOError,
    TruncatedTableError,
    UnsupportedVersionError,
    augment,
    load,
    q_update,
    save,
    select_action,
)
from hpnarm.state import N_STATES, pack_bins, unpack_index

HP = HyperParams(alpha=0.1, gamma=0.9, epsilon=0.0)


def scratch_neighbors(state, radius=1):
    """All states one digit away by up to `radius` steps, via unpack/pack."""
    bins = list(unpack_index(state))
    out = []
    for d in range(10):
        for step in range(1, radius + 1):
            for sign in (1, -1):
                nb = bins[d] + sign * step
                if 0 <= nb <= 3:
                    b2 = bins.copy()
                    b2[d] = nb
                    out.append(pack_bins(b2))
    return out


class TestHyperParams:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"alpha": 0.0},
            {"alpha": 1.5},
            {"gamma": 1.0},
            {"gamma": -0.1},
            {"epsilon": -0.01},
            {"epsilon": 1.01},
        ],
    )
    def test_out_of_range_rejected(self, kwargs):
        with pytest.raises(ValueError):
            HyperParams(**kwargs)

    def test_boundary_values_allowed(self):
        HyperParams(alpha=1.0, gamma=0.0, epsilon=0.0)
        HyperParams(alpha=0.01, gamma=0.99, epsilon=1.0)


class TestActionSpec:
    def test_ids_bijective_with_triples(self):
        spec = ActionSpec()
        seen = set()
        for aid in range(32):
            triple = spec.decompose(aid)
            seen.add(triple)
            assert spec.compose(*triple) == aid
        assert len(seen) == 32

    def test_structure_of_packing(self):
        spec = ActionSpec()
        assert spec.decompose(0) == (0, 0, 1)
        assert spec.decompose(1) == (0, 0, -1)
        assert spec.decompose(8) == (1, 0, 1)
        assert spec.decompose(31) == (3, 3, -1)

    def test_apply_moves_one_chamber(self):
        spec = ActionSpec(delta_p_kpa=5.0)
        p = np.full((4, 4), 30.0)
        out = spec.apply(p, spec.compose(2, 1, 1), p_max_kpa=60.0)
        assert out[2, 1] == 35.0
        assert np.count_nonzero(out != 30.0) == 1
        assert p[2, 1] == 30.0  # input untouched

    def test_apply_saturates_at_bounds(self):
        spec = ActionSpec(delta_p_kpa=5.0)
        p = np.zeros((4, 4))
        p[1, 3] = 58.0
        up = spec.apply(p, spec.compose(1, 3, 1), p_max_kpa=60.0)
        assert up[1, 3] == 60.0
        down = spec.apply(p, spec.compose(0, 0, -1), p_max_kpa=60.0)
        assert down[0, 0] == 0.0

    def test_bad_inputs_rejected(self):
        with pytest.raises(ValueError):
            ActionSpec(delta_p_kpa=0.0)
        with pytest.raises(ValueError):
            ActionSpec().decompose(32)


class TestQUpdate:
    def test_first_update_from_zero(self):
        q = QTable()
        assert q_update(q, 5, 3, 1.0, 6, HP) == pytest.approx(0.1)
        assert q.flags(5)[3] == FLAG_TRAINED

    def test_update_with_bootstrap_target(self):
        q = QTable()
        q.set_entry(5, 3, 0.5, FLAG_TRAINED)
        q.set_entry(6, 0, 2.0, FLAG_TRAINED)
        assert q_update(q, 5, 3, 1.0, 6, HP) == pytest.approx(0.73, rel=1e-6)

    def test_zero_reward_shrinks_toward_zero(self):
        q = QTable()
        q.set_entry(9, 1, 0.8, FLAG_TRAINED)
        new = q_update(q, 9, 1, 0.0, 777, HyperParams(alpha=0.25, gamma=0.9, epsilon=0.0))
        assert new == pytest.approx(0.75 * 0.8, rel=1e-6)

    def test_nonfinite_reward_rejected(self):
        q = QTable()
        with pytest.raises(ValueError):
            q_update(q, 0, 0, float("nan"), 1, HP)
        with pytest.raises(ValueError):
            q_update(q, 0, 0, float("inf"), 1, HP)

    def test_touches_exactly_one_entry(self):
        q = QTable()
        q.set_entry(4, 7, 1.25, FLAG_TRAINED)
        q.set_entry(200, 2, -0.5, FLAG_TRAINED)
        before = q.copy()
        q_update(q, 4, 9, 2.0, 200, HP)
        bs, ba, bf, bv = before.record_arrays()
        as_, aa, af, av = q.record_arrays()
        assert as_.size == bs.size + 1
        changed = {(int(s), int(a)) for s, a in zip(as_, aa)} - {
            (int(s), int(a)) for s, a in zip(bs, ba)
        }
        assert changed == {(4, 9)}
        assert q.get(4, 7) == before.get(4, 7)
        assert q.get(200, 2) == before.get(200, 2)

    def test_untouched_states_read_as_zero(self):
        q = QTable()
        assert q.get(123456, 31) == 0.0
        assert q.max_value(999) == 0.0
        assert not q.flags(42).any()
        assert q.entry_count() == 0


class TestSelectAction:
    def test_greedy_picks_unique_max(self, rng):
        q = QTable()
        q.set_entry(3, 7, 5.0, FLAG_TRAINED)
        q.set_entry(3, 12, 4.0, FLAG_TRAINED)
        assert select_action(q, 3, 0.0, rng) == 7

    def test_all_equal_row_breaks_tie_to_action_zero(self, rng):
        q = QTable()
        assert select_action(q, 11, 0.0, rng) == 0

    def test_tie_between_two_entries_takes_lower_id(self, rng):
        q = QTable()
        q.set_entry(1, 4, 2.0, FLAG_TRAINED)
        q.set_entry(1, 9, 2.0, FLAG_TRAINED)
        assert select_action(q, 1, 0.0, rng) == 4

    def test_full_exploration_is_uniform(self):
        rng = np.random.default_rng(99)
        q = QTable()
        counts = np.zeros(32, dtype=int)
        n = 100_000
        for _ in range(n):
            counts[select_action(q, 0, 1.0, rng)] += 1
        p = 1 / 32
        sigma = (n * p * (1 - p)) ** 0.5
        assert np.all(np.abs(counts - n * p) < 3 * sigma + 1)

    def test_greedy_invariant_under_row_shift_and_scale(self, rng):
        base = np.linspace(-1.0, 2.0, 32).astype(np.float32)
        q1, q2, q3 = QTable(), QTable(), QTable()
        for a in range(32):
            q1.set_entry(0, a, float(base[a]), FLAG_TRAINED)
            q2.set_entry(0, a, float(base[a] + 7.5), FLAG_TRAINED)
            q3.set_entry(0, a, float(base[a] * 3.0), FLAG_TRAINED)
        picks = {select_action(t, 0, 0.0, rng) for t in (q1, q2, q3)}
        assert len(picks) == 1


class TestAugment:
    def test_mean_of_two_trained_neighbors(self):
        center = pack_bins((1, 1, 1, 1, 1, 1, 1, 1, 1, 1))
        up = pack_bins((1, 1, 1, 1, 1, 1, 1, 1, 1, 2))
        down = pack_bins((1, 1, 1, 1, 1, 1, 1, 1, 1, 0))
        q = QTable()
        q.set_entry(up, 4, 1.0, FLAG_TRAINED)
        q.set_entry(down, 4, 3.0, FLAG_TRAINED)
        out = augment(q)
        assert out.get(center, 4) == 2.0
        assert out.flags(center)[4] == FLAG_AUGMENTED

    def test_no_trained_neighbors_leaves_zero(self):
        far_a = pack_bins((0,) * 10)
        far_b = pack_bins((3,) * 10)
        q = QTable()
        q.set_entry(far_a, 0, 5.0, FLAG_TRAINED)
        out = augment(q)
        assert out.get(far_b, 0) == 0.0
        assert out.flags(far_b)[0] == 0

    def test_different_actions_do_not_mix(self):
        s1 = pack_bins((2, 0, 0, 0, 0, 0, 0, 0, 0, 0))
        s2 = pack_bins((1, 0, 0, 0, 0, 0, 0, 0, 0, 0))
        q = QTable()
        q.set_entry(s1, 3, 9.0, FLAG_TRAINED)
        out = augment(q)
        assert out.get(s2, 3) == 9.0
        assert out.get(s2, 4) == 0.0

    def test_trained_entries_bit_unchanged(self, rng):
        q = QTable()
        states = rng.integers(0, N_STATES, 200)
        for s in states:
            q.set_entry(int(s), int(rng.integers(32)), float(rng.normal()), FLAG_TRAINED)
        before = {
            (int(s), int(a)): (int(f), v.tobytes())
            for s, a, f, v in zip(*q.record_arrays())
        }
        out = augment(q)
        _, _, of, ov = out.record_arrays()
        after = {
            (int(s), int(a)): (int(f), v.tobytes())
            for s, a, f, v in zip(*out.record_arrays())
        }
        for key, (f, vb) in before.items():
            assert after[key] == (f, vb)

    def test_fully_trained_table_keeps_values(self):
        # fully trained on a tiny sub-lattice: every state's every action trained
        q = QTable(action_count=4)
        lattice = [pack_bins((b,) + (0,) * 9) for b in range(4)]
        for s in lattice:
            for a in range(4):
                q.set_entry(s, a, float(s % 7) + a, FLAG_TRAINED)
        out = augment(q)
        for s in lattice:
            for a in range(4):
                assert out.get(s, a) == q.get(s, a)
                assert out.flags(s)[a] == FLAG_TRAINED

    def test_input_table_is_not_mutated(self):
        s1 = pack_bins((0, 0, 0, 0, 0, 0, 0, 0, 0, 1))
        q = QTable()
        q.set_entry(s1, 0, 4.0, FLAG_TRAINED)
        augment(q)
        assert q.entry_count() == 1
        assert q.augmented_count() == 0

    def test_second_pass_adds_nothing_new(self):
        q = QTable()
        q.set_entry(pack_bins((1,) * 10), 2, 6.0, FLAG_TRAINED)
        once = augment(q)
        twice = augment(once)
        assert twice == once
        assert twice.augmented_count() == once.augmented_count()

    def test_radius_two_reaches_two_step_neighbors(self):
        src = pack_bins((0, 0, 0, 0, 0, 0, 0, 0, 0, 0))
        two_away = pack_bins((0, 0, 0, 0, 0, 0, 0, 0, 0, 2))
        q = QTable()
        q.set_entry(src, 1, 8.0, FLAG_TRAINED)
        assert augment(q, radius=1).get(two_away, 1) == 0.0
        assert augment(q, radius=2).get(two_away, 1) == 8.0
        with pytest.raises(ValueError):
            augment(q, radius=0)

    def test_digit_boundaries_do_not_wrap(self):
        # digit 0 in the last dim: the "down" neighbor does not exist and the
        # "up" neighbor from digit 3 must not carry into the next dim
        lo = pack_bins((0, 0, 0, 0, 0, 0, 0, 0, 0, 0))
        hi = pack_bins((0, 0, 0, 0, 0, 0, 0, 0, 0, 3))
        q = QTable()
        q.set_entry(lo, 0, 1.0, FLAG_TRAINED)
        q.set_entry(hi, 0, 1.0, FLAG_TRAINED)
        out = augment(q)
        os_, oa, of, ov = out.record_arrays()
        expected = set()
        for s in (lo, hi):
            expected.update(scratch_neighbors(s))
        got_aug = {int(s) for s, f in zip(os_, of) if f & FLAG_AUGMENTED}
        assert got_aug == expected - {lo, hi}

    def test_dense_and_sparse_backends_agree(self, rng):
        states = rng.integers(0, N_STATES, 500)
        actions = rng.integers(0, 32, 500)
        values = rng.normal(size=500).astype(np.float32)
        keys = {}
        for s, a, v in zip(states, actions, values):
            keys[(int(s), int(a))] = float(v)
        items = sorted(keys.items())
        s_arr = np.array([k[0] for k, _ in items], dtype=np.uint32)
        a_arr = np.array([k[1] for k, _ in items], dtype=np.uint16)
        f_arr = np.full(len(items), FLAG_TRAINED, dtype=np.uint16)
        v_arr = np.array([v for _, v in items], dtype=np.float32)
        sparse = QTable.from_records(s_arr, a_arr, f_arr, v_arr, dense=False)
        dense = QTable.from_records(s_arr, a_arr, f_arr, v_arr, dense=True)
        assert sparse == dense
        assert augment(sparse) == augment(dense)

    @given(
        entries=st.lists(
            st.tuples(
                st.integers(0, N_STATES - 1),
                st.integers(0, 31),
                st.floats(-10.0, 10.0, width=32),
            ),
            min_size=1,
            max_size=25,
            unique_by=lambda e: (e[0], e[1]),
        )
    )
    @settings(max_examples=50, deadline=None)
    def test_matches_scratch_neighbor_means(self, entries):
        q = QTable()
        trained = {}
        for s, a, v in entries:
            q.set_entry(s, a, v, FLAG_TRAINED)
            trained[(s, a)] = q.get(s, a)
        out = augment(q)
        expected = {}
        for (s, a), v in trained.items():
            for n in scratch_neighbors(s):
                if (n, a) not in trained:
                    expected.setdefault((n, a), []).append(v)
        for (n, a), vals in expected.items():
            assert out.flags(n)[a] == FLAG_AUGMENTED
            assert out.get(n, a) == pytest.approx(sum(vals) / len(vals), abs=1e-6)
        os_, oa, of, _ = out.record_arrays()
        n_aug = int(np.count_nonzero(of & FLAG_AUGMENTED))
        assert n_aug == len(expected)


class TestPersistence:
    def test_empty_table_round_trip(self, tmp_path):
        path = tmp_path / "empty.qt"
        q = QTable()
        save(q, path)
        assert load(path) == q

    def test_small_table_round_trip_bit_exact(self, tmp_path, rng):
        q = QTable()
        for _ in range(300):
            q.set_entry(
                int(rng.integers(0, N_STATES)),
                int(rng.integers(32)),
                float(rng.normal()),
                int(rng.choice([FLAG_TRAINED, FLAG_AUGMENTED, FLAG_TRAINED | FLAG_AUGMENTED])),
            )
        path = tmp_path / "small.qt"
        save(q, path)
        back = load(path)
        assert back == q
        path2 = tmp_path / "again.qt"
        save(back, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_million_entry_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        keys = np.unique(rng.integers(0, N_STATES * 32, 1_200_000, dtype=np.int64))[:1_000_000]
        states = (keys // 32).astype(np.uint32)
        actions = (keys % 32).astype(np.uint16)
        flags = rng.choice(
            np.array([1, 2, 3], dtype=np.uint16), size=keys.size
        )
        values = rng.normal(size=keys.size).astype(np.float32)
        q = QTable.from_records(states, actions, flags, values)
        assert q.dense
        path = tmp_path / "big.qt"
        save(q, path)
        back = load(path)
        assert back == q

    def test_small_action_count_round_trip(self, tmp_path):
        q = QTable(action_count=4)
        q.set_entry(12, 3, -1.5, FLAG_TRAINED)
        path = tmp_path / "grid.qt"
        save(q, path)
        back = load(path)
        assert back.action_count == 4
        assert back == q

    def test_corrupted_magic_rejected(self, tmp_path):
        path = tmp_path / "t.qt"
        save(QTable(), path)
        raw = bytearray(path.read_bytes())
        raw[0] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(BadMagicError):
            load(path)

    def test_unknown_version_rejected(self, tmp_path):
        path = tmp_path / "t.qt"
        body = MAGIC + struct.pack("<IIQ", 9, 32, 0)
        path.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
        with pytest.raises(UnsupportedVersionError):
            load(path)

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "t.qt"
        q = QTable()
        q.set_entry(1, 1, 1.0, FLAG_TRAINED)
        save(q, path)
        raw = path.read_bytes()
        for cut in (2, 10, len(raw) - 3):
            path.write_bytes(raw[:cut])
            with pytest.raises(TruncatedTableError):
                load(path)

    def test_flipped_record_byte_fails_checksum(self, tmp_path):
        path = tmp_path / "t.qt"
        q = QTable()
        q.set_entry(77, 5, 2.5, FLAG_TRAINED)
        save(q, path)
        raw = bytearray(path.read_bytes())
        raw[_record_offset() + 2] ^= 0x01
        path.write_bytes(bytes(raw))
        with pytest.raises(ChecksumError):
            load(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "t.qt"
        save(QTable(), path)
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(QTableIOError):
            load(path)

    def test_unsorted_records_rejected(self, tmp_path):
        rec = np.zeros(2, dtype=[("state", "<u4"), ("action", "<u2"), ("flags", "<u2"), ("value", "<f4")])
        rec["state"] = (5, 4)
        rec["flags"] = 1
        body = MAGIC + struct.pack("<IIQ", 1, 32, 2) + rec.tobytes()
        path = tmp_path / "t.qt"
        path.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
        with pytest.raises(QTableIOError):
            load(path)


def _record_offset():
    return 4 + struct.calcsize("<IIQ")
