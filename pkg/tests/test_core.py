import numpy as np
import pytest

from schemanet.core import (
    ALL_ACTIONS,
    ConfigurationError,
    ContractError,
    EnvSpec,
    FrameStack,
    ParameterSet,
    apply_schema_matrix,
    build_augmented,
    decode_bit,
    neighbor_map,
    next_state,
    pack_rows,
    reward_fires,
    schema_fires,
    schema_matches,
    state_from_types,
    unpack_rows,
)


def bits(text: str) -> np.ndarray:
    return np.array([int(c) for c in text], dtype=np.uint8)


def tiny_spec(**kw) -> EnvSpec:
    args = dict(grid_width=1, grid_height=1, num_types=2, num_actions=3, window_side=1)
    args.update(kw)
    return EnvSpec(**args)


class TestEnvSpec:
    def test_row_width_formula(self):
        spec = EnvSpec(grid_width=15, grid_height=12, num_types=5, num_actions=3,
                       window_side=3)
        assert spec.row_width == 2 * 5 * 9 + 3 == 93
        assert spec.num_entities == 180

    def test_even_window_rejected(self):
        with pytest.raises(ConfigurationError):
            EnvSpec(grid_width=3, grid_height=3, num_types=2, num_actions=1,
                    window_side=2)

    def test_single_type_rejected(self):
        with pytest.raises(ConfigurationError):
            EnvSpec(grid_width=3, grid_height=3, num_types=1, num_actions=1,
                    window_side=1)


class TestBuildAugmented:
    def test_single_cell_single_action(self):
        # window 1 reduces to plain concatenation of the two frames plus action
        spec = tiny_spec()
        frames = FrameStack(prev=bits("01")[None, :], curr=bits("10")[None, :])
        out = build_augmented(frames, 2, spec)
        assert out.tolist() == [[0, 1, 1, 0, 0, 0, 1]]

    def test_single_cell_all_actions(self):
        spec = tiny_spec()
        frames = FrameStack(prev=bits("01")[None, :], curr=bits("10")[None, :])
        out = build_augmented(frames, ALL_ACTIONS, spec)
        assert out.tolist() == [[0, 1, 1, 0, 1, 1, 1]]

    def test_corner_padding_count(self):
        # independent count of off-grid window offsets for a 3x3 grid
        spec = EnvSpec(grid_width=3, grid_height=3, num_types=2, num_actions=1,
                       window_side=3)
        idx = neighbor_map(spec)
        corner_offgrid = sum(
            1
            for dr in (-1, 0, 1)
            for dc in (-1, 0, 1)
            if not (0 <= 0 + dr < 3 and 0 <= 0 + dc < 3)
        )
        assert corner_offgrid == 5
        assert int((idx[0] < 0).sum()) == 5
        center = 1 * 3 + 1
        assert int((idx[center] < 0).sum()) == 0

    def test_convolution_equivalence(self):
        # windowed rows equal an independent per-entity gather
        rng = np.random.default_rng(0)
        spec = EnvSpec(grid_width=5, grid_height=4, num_types=3, num_actions=2,
                       window_side=3)
        frame = np.zeros((spec.num_entities, 3), np.uint8)
        frame[np.arange(spec.num_entities), rng.integers(0, 3, spec.num_entities)] = 1
        frames = FrameStack(prev=frame, curr=frame)
        out = build_augmented(frames, 0, spec)
        half = spec.window_side // 2
        for e in range(spec.num_entities):
            r, c = divmod(e, spec.grid_width)
            gathered = []
            for dr in range(-half, half + 1):
                for dc in range(-half, half + 1):
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < spec.grid_height and 0 <= cc < spec.grid_width:
                        gathered.extend(frame[rr * spec.grid_width + cc])
                    else:
                        gathered.extend([0] * spec.num_types)
            assert out[e, : spec.frame_block].tolist() == gathered

    def test_action_block_is_only_difference(self):
        rng = np.random.default_rng(1)
        spec = EnvSpec(grid_width=4, grid_height=3, num_types=3, num_actions=3,
                       window_side=3)
        frame = np.eye(3, dtype=np.uint8)[rng.integers(0, 3, spec.num_entities)]
        frames = FrameStack(prev=frame, curr=frame)
        single = build_augmented(frames, 1, spec)
        allact = build_augmented(frames, ALL_ACTIONS, spec)
        cut = 2 * spec.frame_block
        assert np.array_equal(single[:, :cut], allact[:, :cut])
        assert not np.array_equal(single[:, cut:], allact[:, cut:])

    def test_center_cell_mirrors_frame(self):
        rng = np.random.default_rng(2)
        spec = EnvSpec(grid_width=4, grid_height=4, num_types=4, num_actions=2,
                       window_side=3)
        curr = np.eye(4, dtype=np.uint8)[rng.integers(0, 4, spec.num_entities)]
        prev = np.eye(4, dtype=np.uint8)[rng.integers(0, 4, spec.num_entities)]
        out = build_augmented(FrameStack(prev, curr), 0, spec)
        center = spec.window_cells // 2
        lo = spec.frame_block + center * spec.num_types
        assert np.array_equal(out[:, lo:lo + spec.num_types], curr)
        lo = center * spec.num_types
        assert np.array_equal(out[:, lo:lo + spec.num_types], prev)

    def test_bad_action_rejected(self):
        spec = tiny_spec()
        frames = FrameStack(prev=bits("01")[None, :], curr=bits("10")[None, :])
        with pytest.raises(ConfigurationError):
            build_augmented(frames, 3, spec)

    def test_frame_shape_mismatch_rejected(self):
        spec = tiny_spec()
        frames = FrameStack(prev=np.zeros((2, 2), np.uint8), curr=np.zeros((2, 2), np.uint8))
        with pytest.raises(ConfigurationError):
            build_augmented(frames, 0, spec)


class TestSchemaFires:
    def test_all_active_row(self):
        assert schema_fires(bits("1111"), bits("0101"))

    def test_missing_required_bit(self):
        assert not schema_fires(bits("1010"), bits("0101"))

    def test_empty_conjunction_is_vacuous(self):
        assert schema_fires(bits("0000"), bits("0000"))

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            schema_fires(bits("101"), bits("01"))

    def test_dot_product_equivalence_exhaustive(self):
        # fires(row, w) <=> dot(1 - row, w) == 0, exhaustive at small width
        d = 6
        for row_int in range(1 << d):
            row = np.array([(row_int >> i) & 1 for i in range(d)], np.uint8)
            for w_int in range(1 << d):
                w = np.array([(w_int >> i) & 1 for i in range(d)], np.uint8)
                assert schema_fires(row, w) == (int((1 - row) @ w) == 0)

    def test_dot_product_equivalence_random_wide(self):
        rng = np.random.default_rng(3)
        for _ in range(2000):
            row = rng.integers(0, 2, 12).astype(np.uint8)
            w = rng.integers(0, 2, 12).astype(np.uint8)
            assert schema_fires(row, w) == (int((1 - row) @ w) == 0)


class TestApplySchemaMatrix:
    def test_two_rows_two_schemas(self):
        x = np.stack([bits("110"), bits("011")])
        w = np.stack([bits("100"), bits("001")])
        assert apply_schema_matrix(x, w).tolist() == [1, 1]

    def test_empty_matrix(self):
        x = np.stack([bits("110"), bits("011")])
        w = np.zeros((0, 3), np.uint8)
        assert apply_schema_matrix(x, w).tolist() == [0, 0]

    def test_single_schema(self):
        x = np.stack([bits("110"), bits("011")])
        w = np.stack([bits("110")])
        assert apply_schema_matrix(x, w).tolist() == [1, 0]

    def test_matches_or_fold_of_schema_fires(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            n, k, d = rng.integers(1, 32), rng.integers(0, 6), rng.integers(1, 17)
            x = rng.integers(0, 2, (n, d)).astype(np.uint8)
            w = rng.integers(0, 2, (k, d)).astype(np.uint8)
            got = apply_schema_matrix(x, w)
            want = np.array(
                [int(any(schema_fires(row, mask) for mask in w)) for row in x],
                np.uint8,
            )
            assert np.array_equal(got, want)


class TestNextState:
    def test_identity_with_zero_deltas(self):
        s = np.array([[1, 0], [0, 1]], np.uint8)
        z = np.zeros_like(s)
        assert np.array_equal(next_state(s, z, z), s)

    def test_destroy_then_recreate(self):
        one = np.array([[1]], np.uint8)
        assert next_state(one, one, one).tolist() == [[1]]

    def test_lower_clip(self):
        zero = np.array([[0]], np.uint8)
        one = np.array([[1]], np.uint8)
        assert next_state(zero, zero, one).tolist() == [[0]]

    def test_bit_identity(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            s = rng.integers(0, 2, (6, 4)).astype(np.uint8)
            dp = rng.integers(0, 2, (6, 4)).astype(np.uint8)
            dm = rng.integers(0, 2, (6, 4)).astype(np.uint8)
            got = next_state(s, dp, dm)
            want = ((s.astype(bool) & ~dm.astype(bool)) | dp.astype(bool)).astype(np.uint8)
            assert np.array_equal(got, want)

    def test_idempotent_after_application(self):
        rng = np.random.default_rng(6)
        s = rng.integers(0, 2, (8, 3)).astype(np.uint8)
        dp = rng.integers(0, 2, (8, 3)).astype(np.uint8)
        dm = rng.integers(0, 2, (8, 3)).astype(np.uint8)
        once = next_state(s, dp, dm)
        z = np.zeros_like(s)
        assert np.array_equal(next_state(once, z, z), once)


class TestRewardFires:
    def test_empty_matrix(self):
        x = np.stack([bits("10"), bits("01")])
        assert not reward_fires(x, np.zeros((0, 2), np.uint8))

    def test_one_row_fires(self):
        x = np.stack([bits("10"), bits("01")])
        assert reward_fires(x, np.stack([bits("01")]))

    def test_no_row_fires(self):
        x = np.stack([bits("10"), bits("10")])
        assert not reward_fires(x, np.stack([bits("01")]))


class TestPacking:
    def test_round_trip(self):
        rng = np.random.default_rng(7)
        for width in (1, 7, 64, 65, 93, 128, 493):
            rows = rng.integers(0, 2, (9, width)).astype(np.uint8)
            packed = pack_rows(rows)
            assert packed.shape == (9, (width + 63) // 64)
            assert np.array_equal(unpack_rows(packed, width), rows)

    def test_matches_on_packed_agrees(self):
        rng = np.random.default_rng(8)
        x = rng.integers(0, 2, (20, 93)).astype(np.uint8)
        w = rng.integers(0, 2, (5, 93)).astype(np.uint8)
        table = schema_matches(x, w)
        for i in range(20):
            for k in range(5):
                assert table[i, k] == schema_fires(x[i], w[k])


class TestDecodeBit:
    def test_layout(self):
        spec = EnvSpec(grid_width=5, grid_height=5, num_types=3, num_actions=2,
                       window_side=3)
        assert decode_bit(0, spec) == ("prev", -1, -1, 0)
        center = (spec.window_cells // 2) * spec.num_types
        assert decode_bit(spec.frame_block + center, spec) == ("curr", 0, 0, 0)
        assert decode_bit(2 * spec.frame_block + 1, spec) == ("action", 1)

    def test_out_of_range(self):
        spec = tiny_spec()
        with pytest.raises(ContractError):
            decode_bit(spec.row_width, spec)


class TestParameterSet:
    def spec(self):
        return EnvSpec(grid_width=3, grid_height=3, num_types=2, num_actions=2,
                       window_side=1)

    def test_empty_counts(self):
        params = ParameterSet.empty(self.spec(), cap=10)
        assert set(params.tags()) == {"W+0", "W+1", "W-0", "W-1", "R+", "R-"}
        assert all(v == 0 for v in params.schema_counts().values())

    def test_append_and_cap(self):
        params = ParameterSet.empty(self.spec(), cap=2)
        mask = np.zeros(params.spec.row_width, np.uint8)
        mask[0] = 1
        params.append_schema("W+0", mask)
        params.append_schema("W+0", mask)
        with pytest.raises(ConfigurationError):
            params.append_schema("W+0", mask)

    def test_empty_mask_rejected(self):
        params = ParameterSet.empty(self.spec(), cap=10)
        with pytest.raises(ConfigurationError):
            params.append_schema("R+", np.zeros(params.spec.row_width, np.uint8))

    def test_multi_action_mask_rejected(self):
        params = ParameterSet.empty(self.spec(), cap=10)
        mask = np.zeros(params.spec.row_width, np.uint8)
        mask[-1] = 1
        mask[-2] = 1
        with pytest.raises(ConfigurationError):
            params.append_schema("W+0", mask)

    def test_packed_cache_tracks_mutation(self):
        params = ParameterSet.empty(self.spec(), cap=10)
        mask = np.zeros(params.spec.row_width, np.uint8)
        mask[3] = 1
        assert params.packed("W+0").shape[0] == 0
        params.append_schema("W+0", mask)
        packed = params.packed("W+0")
        assert packed.shape[0] == 1
        assert np.array_equal(unpack_rows(packed, params.spec.row_width)[0], mask)


def test_state_from_types_one_hot():
    spec = EnvSpec(grid_width=2, grid_height=2, num_types=3, num_actions=1,
                   window_side=1)
    tm = np.array([[0, 1], [2, 0]])
    s = state_from_types(tm, spec)
    assert s.shape == (4, 3)
    assert s.sum(axis=1).tolist() == [1, 1, 1, 1]
    assert s[1].tolist() == [0, 1, 0]
    assert s[2].tolist() == [0, 0, 1]
