import random

import numpy as np
import pytest

from schemanet.core import ContractError, EnvSpec, ParameterSet, schema_fires
from schemanet.learner import (
    AttributeDataset,
    ReplayBuffer,
    RewardDataset,
    Transition,
    attribute_dataset,
    brute_force_oracle,
    learn_epoch,
    learn_reward_schema,
    learn_schema,
    prune_false_positives,
    reward_dataset,
)


def bits(text: str) -> np.ndarray:
    return np.array([int(c) for c in text], dtype=np.uint8)


def dataset(rows, labels):
    return AttributeDataset(np.stack([bits(r) for r in rows]),
                            np.array(labels, np.uint8))


def empty_existing(d):
    return np.zeros((0, d), np.uint8)


# ---------------------------------------------------------------------------
# oracle first: its verdicts anchor the greedy learner's tests

class TestBruteForceOracle:
    def test_all_positive_dataset_yields_single_bits(self):
        ds = dataset(["110", "111"], [1, 1])
        result = brute_force_oracle(ds)
        masks = {tuple(m) for m, _ in result}
        assert masks == {(1, 0, 0), (0, 1, 0), (0, 0, 1)}
        cov = {tuple(m): c for m, c in result}
        assert cov[(1, 0, 0)] == 2 and cov[(0, 0, 1)] == 1

    def test_no_positives_empty(self):
        ds = dataset(["101"], [0])
        assert brute_force_oracle(ds) == []

    def test_separating_masks(self):
        # positives {111, 110}, negative {010}: minimal separators are
        # bit0 (covers both) and bit2 (covers one)
        ds = dataset(["111", "110", "010"], [1, 1, 0])
        result = brute_force_oracle(ds)
        masks = {tuple(m): c for m, c in result}
        assert masks == {(1, 0, 0): 2, (0, 0, 1): 1}

    def test_guard(self):
        ds = AttributeDataset(np.zeros((1, 17), np.uint8), np.array([1], np.uint8))
        with pytest.raises(ContractError):
            brute_force_oracle(ds)

    def test_minimality_definition(self):
        # {11} vs negatives {10, 01}: only the full mask separates
        ds = dataset(["11", "10", "01"], [1, 0, 0])
        result = brute_force_oracle(ds)
        assert {tuple(m) for m, _ in result} == {(1, 1)}


class TestLearnSchema:
    def test_max_coverage_example(self):
        ds = dataset(["111", "110", "010"], [1, 1, 0])
        w = learn_schema(ds, empty_existing(3))
        assert w.tolist() == [1, 0, 0]

    def test_single_positive_tie_break_lowest_index(self):
        ds = dataset(["101"], [1])
        w = learn_schema(ds, empty_existing(3))
        assert w.tolist() == [1, 0, 0]

    def test_contradiction_returns_none(self):
        ds = dataset(["110", "110"], [1, 0])
        assert learn_schema(ds, empty_existing(3)) is None

    def test_superset_negative_returns_none(self):
        ds = dataset(["100", "110"], [1, 0])
        assert learn_schema(ds, empty_existing(3)) is None

    def test_no_false_negative_returns_none(self):
        ds = dataset(["110"], [1])
        covering = np.stack([bits("100")])
        assert learn_schema(ds, covering) is None

    def test_fires_on_seed_and_rejects_negatives(self):
        rng = np.random.default_rng(0)
        for _ in range(60):
            d = int(rng.integers(2, 9))
            n = int(rng.integers(2, 40))
            rows = rng.integers(0, 2, (n, d)).astype(np.uint8)
            labels = rng.integers(0, 2, n).astype(np.uint8)
            ds = AttributeDataset(rows, labels)
            w = learn_schema(ds, empty_existing(d))
            pos = rows[labels == 1]
            neg = rows[labels == 0]
            if w is None:
                if len(pos):
                    seed = pos[0]
                    assert any(schema_fires(r, seed) for r in neg)
                continue
            assert schema_fires(pos[0], w)
            assert not any(schema_fires(r, w) for r in neg)

    def test_oracle_agreement(self):
        # greedy output must be one of the oracle's minimal zero-FP masks
        rng = np.random.default_rng(1)
        checked = 0
        for _ in range(150):
            d = int(rng.integers(2, 9))
            n = int(rng.integers(2, 50))
            rows = rng.integers(0, 2, (n, d)).astype(np.uint8)
            labels = rng.integers(0, 2, n).astype(np.uint8)
            ds = AttributeDataset(rows, labels)
            w = learn_schema(ds, empty_existing(d))
            if w is None:
                continue
            minimal = {tuple(m) for m, _ in brute_force_oracle(ds)}
            assert tuple(w) in minimal
            checked += 1
        assert checked > 25

    def test_inclusion_minimality_direct(self):
        rng = np.random.default_rng(2)
        for _ in range(40):
            d = int(rng.integers(3, 10))
            rows = rng.integers(0, 2, (30, d)).astype(np.uint8)
            labels = rng.integers(0, 2, 30).astype(np.uint8)
            ds = AttributeDataset(rows, labels)
            w = learn_schema(ds, empty_existing(d))
            if w is None:
                continue
            neg = rows[labels == 0]
            for b in np.flatnonzero(w):
                reduced = w.copy()
                reduced[b] = 0
                assert reduced.sum() == 0 or any(
                    schema_fires(r, reduced) for r in neg
                )

    def test_seeded_random_mode(self):
        ds = dataset(["100", "010"], [1, 1])
        rng = random.Random(5)
        w = learn_schema(ds, empty_existing(3), rng=rng)
        assert w is not None


class TestLearnRewardSchema:
    def test_single_bag(self):
        ds = RewardDataset(
            bags=[np.stack([bits("10"), bits("01")])],
            negatives=np.stack([bits("00")]),
        )
        w = learn_reward_schema(ds, empty_existing(2))
        assert w.tolist() == [1, 0]

    def test_bag_inside_negatives(self):
        ds = RewardDataset(
            bags=[np.stack([bits("10")])],
            negatives=np.stack([bits("10"), bits("11")]),
        )
        assert learn_reward_schema(ds, empty_existing(2)) is None

    def test_shared_row_covers_both_bags(self):
        shared = bits("11")
        ds = RewardDataset(
            bags=[np.stack([shared]), np.stack([shared])],
            negatives=np.stack([bits("10"), bits("01")]),
        )
        w = learn_reward_schema(ds, empty_existing(2))
        assert w.tolist() == [1, 1]

    def test_covered_bags_skipped(self):
        ds = RewardDataset(
            bags=[np.stack([bits("10")]), np.stack([bits("01")])],
            negatives=np.zeros((0, 2), np.uint8),
        )
        existing = np.stack([bits("10")])
        w = learn_reward_schema(ds, existing)
        assert w.tolist() == [0, 1]


# ---------------------------------------------------------------------------
# buffer-level machinery on a miniature deterministic world

def toggle_spec() -> EnvSpec:
    return EnvSpec(grid_width=2, grid_height=2, num_types=2, num_actions=2,
                   window_side=1)


def toggle_transition(rng: random.Random, spec: EnvSpec) -> Transition:
    """A 2-type world where a cell's next type is type1 iff exactly one of
    (action is 1, previous type was 1) holds."""
    n = spec.num_entities
    prev = np.eye(2, dtype=np.uint8)[[rng.randrange(2) for _ in range(n)]]
    curr = np.eye(2, dtype=np.uint8)[[rng.randrange(2) for _ in range(n)]]
    action = rng.randrange(2)
    nxt_types = [(1 if (action == 1) != (prev[e, 1] == 1) else 0) for e in range(n)]
    nxt = np.eye(2, dtype=np.uint8)[nxt_types]
    reward = 1 if action == 1 else 0
    return Transition(prev, curr, action, nxt, reward)


def toggle_buffer(count=60, seed=0) -> ReplayBuffer:
    spec = toggle_spec()
    buffer = ReplayBuffer(spec)
    rng = random.Random(seed)
    while len(buffer) < count:
        buffer.insert(toggle_transition(rng, spec))
    return buffer


class TestReplayBuffer:
    def test_duplicate_rejected(self):
        spec = toggle_spec()
        buffer = ReplayBuffer(spec)
        tr = toggle_transition(random.Random(1), spec)
        assert buffer.insert(tr)
        assert not buffer.insert(tr)
        assert len(buffer) == 1

    def test_action_distinguishes(self):
        spec = toggle_spec()
        buffer = ReplayBuffer(spec)
        tr = toggle_transition(random.Random(2), spec)
        other = Transition(tr.prev, tr.curr, 1 - tr.action, tr.next, tr.reward)
        assert buffer.insert(tr)
        assert buffer.insert(other)
        assert len(buffer) == 2

    def test_dedup_invariant(self):
        spec = toggle_spec()
        buffer = ReplayBuffer(spec)
        rng = random.Random(3)
        inserted = set()
        for _ in range(200):
            tr = toggle_transition(rng, spec)
            buffer.insert(tr)
            inserted.add(tr.key())
        assert len(buffer) == len(inserted)

    def test_shape_checked(self):
        buffer = ReplayBuffer(toggle_spec())
        bad = np.zeros((3, 2), np.uint8)
        with pytest.raises(Exception):
            buffer.insert(Transition(bad, bad, 0, bad, 0))


class TestLearnEpoch:
    def test_nontrivial_buffer_learns_schemas(self):
        buffer = toggle_buffer()
        params = ParameterSet.empty(buffer.spec, cap=50)
        report = learn_epoch(buffer, params)
        assert report.total_added > 0
        assert all(v == 0 for v in report.residual.values())

    def test_fixpoint(self):
        buffer = toggle_buffer()
        params = ParameterSet.empty(buffer.spec, cap=50)
        learn_epoch(buffer, params)
        report = learn_epoch(buffer, params)
        assert report.total_added == 0
        assert report.pruned == 0

    def test_soundness_zero_false_positives(self):
        buffer = toggle_buffer()
        params = ParameterSet.empty(buffer.spec, cap=50)
        learn_epoch(buffer, params)
        for j in range(buffer.spec.num_types):
            for polarity, tag in ((1, f"W+{j}"), (-1, f"W-{j}")):
                ds = attribute_dataset(buffer, j, polarity)
                neg = ds.rows[ds.labels == 0]
                for mask in params.matrix(tag):
                    assert not any(schema_fires(r, mask) for r in neg), tag
        for sign, tag in ((1, "R+"), (-1, "R-")):
            ds = reward_dataset(buffer, sign)
            for mask in params.matrix(tag):
                assert not any(schema_fires(r, mask) for r in ds.negatives), tag

    def test_stored_schemas_are_minimal(self):
        buffer = toggle_buffer()
        params = ParameterSet.empty(buffer.spec, cap=50)
        learn_epoch(buffer, params)
        for j in range(buffer.spec.num_types):
            for polarity, tag in ((1, f"W+{j}"), (-1, f"W-{j}")):
                ds = attribute_dataset(buffer, j, polarity)
                neg = ds.rows[ds.labels == 0]
                for mask in params.matrix(tag):
                    for b in np.flatnonzero(mask):
                        reduced = mask.copy()
                        reduced[b] = 0
                        assert reduced.sum() == 0 or any(
                            schema_fires(r, reduced) for r in neg
                        ), tag

    def test_cap_saturation_flagged(self):
        # the toggle rule needs two creating schemas for type 1; cap 1 starves it
        buffer = toggle_buffer()
        params = ParameterSet.empty(buffer.spec, cap=1)
        report = learn_epoch(buffer, params)
        assert report.saturated
        assert any(v > 0 for v in report.residual.values())

    def test_predictions_replay_buffer_exactly(self):
        from schemanet.forward import held_out_accuracy

        buffer = toggle_buffer()
        params = ParameterSet.empty(buffer.spec, cap=50)
        learn_epoch(buffer, params)
        acc = held_out_accuracy(buffer, params)
        assert acc.overall == 1.0


class TestPruneFalsePositives:
    def test_contradicted_schema_removed(self):
        buffer = toggle_buffer()
        params = ParameterSet.empty(buffer.spec, cap=50)
        learn_epoch(buffer, params)
        # contradict the learned rule: action 1 from a type-0 cell now keeps type 0
        spec = buffer.spec
        prev = np.eye(2, dtype=np.uint8)[[0, 0, 0, 0]]
        curr = np.eye(2, dtype=np.uint8)[[0, 0, 0, 0]]
        nxt = np.eye(2, dtype=np.uint8)[[0, 0, 0, 0]]
        buffer.insert(Transition(prev, curr, 1, nxt, 0))
        removed = prune_false_positives(buffer, params)
        assert removed > 0

    def test_empty_buffer_no_removal(self):
        spec = toggle_spec()
        buffer = ReplayBuffer(spec)
        params = ParameterSet.empty(spec, cap=50)
        mask = np.zeros(spec.row_width, np.uint8)
        mask[0] = 1
        params.append_schema("W+0", mask)
        assert prune_false_positives(buffer, params) == 0

    def test_consistent_schema_retained(self):
        buffer = toggle_buffer()
        params = ParameterSet.empty(buffer.spec, cap=50)
        learn_epoch(buffer, params)
        before = params.schema_counts()
        assert prune_false_positives(buffer, params) == 0
        assert params.schema_counts() == before


class TestLearnerProgress:
    def test_each_learned_schema_covers_its_seed(self):
        # progress guarantee: the uncovered count strictly decreases
        rng = np.random.default_rng(9)
        rows = rng.integers(0, 2, (40, 6)).astype(np.uint8)
        labels = rng.integers(0, 2, 40).astype(np.uint8)
        ds = AttributeDataset(rows, labels)
        existing = empty_existing(6)
        for _ in range(50):
            pos = [i for i in range(len(rows)) if labels[i] == 1
                   and not any(schema_fires(rows[i], m) for m in existing)]
            w = learn_schema(ds, existing)
            if w is None:
                break
            new_pos = [i for i in pos if not schema_fires(rows[i], w)]
            assert len(new_pos) < len(pos)
            existing = np.vstack([existing, w[None]])
        # terminated either covered or contradictory
