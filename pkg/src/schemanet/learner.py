"""Replay storage and self-supervised schema learning.

Transitions are deduplicated by exact content.  Learning is per target: for
every attribute both a creating and a destroying matrix (labels taken from
the observed 0->1 and 1->0 flips on applicable entities), plus one matrix
per reward sign, where a positive transition contributes a bag of rows and
the conjunction only has to fire somewhere inside the bag.

New schemas come from a deterministic greedy procedure: seed on the first
uncovered positive row, start from that row's full bit mask (which fires
on the seed by construction), then walk the set bits from highest index to
lowest, clearing each bit unless some negative row would start firing.
The survivor is inclusion-minimal, rejects every negative, and keeps the
lowest-index bits on ties.  Schemas that a grown buffer contradicts are
pruned before anything new is learned.

Entities listed in a transition's invalid_entities (the cell a respawned
ball teleported into) are excluded from attribute targets; everything
else in such a transition, including the reward, is still ordinary local
physics and is learned from.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from .core import (
    ConfigurationError,
    ContractError,
    EnvSpec,
    FrameStack,
    ParameterSet,
    bit_column,
    build_augmented,
    pack_rows,
    packed_matches,
    unpack_rows,
)

# Counts every learner entry point call; evaluation paths assert it stays flat.
_invocations = 0


def invocation_count() -> int:
    return _invocations


def _count_call() -> None:
    global _invocations
    _invocations += 1


# ---------------------------------------------------------------------------
# replay buffer

@dataclass(frozen=True)
class Transition:
    prev: np.ndarray
    curr: np.ndarray
    action: int
    next: np.ndarray
    reward: int
    # Entities whose next-state bits are not explained by local dynamics
    # (respawn teleport destinations); derived from content, so not part
    # of the dedup identity.
    invalid_entities: tuple[int, ...] = ()

    @property
    def frames(self) -> FrameStack:
        return FrameStack(self.prev, self.curr)

    def key(self) -> tuple:
        return (
            self.prev.tobytes(),
            self.curr.tobytes(),
            self.action,
            self.next.tobytes(),
            self.reward,
        )


class ReplayBuffer:
    """Append-only store of unique transitions with packed row caches."""

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self.transitions: list[Transition] = []
        self._index: set[tuple] = set()
        self._cached = 0
        self._x_words: list[np.ndarray] = []   # per transition: (N, words)
        self._curr: list[np.ndarray] = []
        self._next: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self.transitions)

    def insert(self, transition: Transition) -> bool:
        shape = (self.spec.num_entities, self.spec.num_types)
        for arr in (transition.prev, transition.curr, transition.next):
            if arr.shape != shape:
                raise ConfigurationError(
                    f"transition matrices must be {shape}, got {arr.shape}"
                )
        key = transition.key()
        if key in self._index:
            return False
        self._index.add(key)
        self.transitions.append(transition)
        return True

    def _sync(self) -> None:
        for tr in self.transitions[self._cached:]:
            x = build_augmented(tr.frames, tr.action, self.spec)
            self._x_words.append(pack_rows(x))
            self._curr.append(np.asarray(tr.curr, dtype=np.uint8))
            self._next.append(np.asarray(tr.next, dtype=np.uint8))
        self._cached = len(self.transitions)

    def stacked(self):
        """(x_words (B,N,W), curr (B,N,M), next (B,N,M), rewards (B,), valid (B,N))."""
        self._sync()
        b = len(self.transitions)
        n, m, w = self.spec.num_entities, self.spec.num_types, self.spec.packed_words
        if b == 0:
            return (
                np.zeros((0, n, w), dtype="<u8"),
                np.zeros((0, n, m), np.uint8),
                np.zeros((0, n, m), np.uint8),
                np.zeros(0, np.int64),
                np.zeros((0, n), bool),
            )
        valid = np.ones((b, n), dtype=bool)
        for i, tr in enumerate(self.transitions):
            for e in tr.invalid_entities:
                valid[i, e] = False
        return (
            np.stack(self._x_words),
            np.stack(self._curr),
            np.stack(self._next),
            np.array([tr.reward for tr in self.transitions], np.int64),
            valid,
        )


# ---------------------------------------------------------------------------
# datasets

@dataclass
class AttributeDataset:
    """Rows and flip labels for one attribute and polarity."""

    rows: np.ndarray            # (n, D) uint8
    labels: np.ndarray          # (n,) 0/1
    provenance: list[tuple[int, int]] | None = None   # (transition, entity)


@dataclass
class RewardDataset:
    """Positive bags (one per rewarded transition) and pooled negative rows."""

    bags: list[np.ndarray]      # each (n_i, D) uint8
    negatives: np.ndarray       # (n0, D) uint8


def attribute_dataset(buffer: ReplayBuffer, attribute: int, polarity: int) -> AttributeDataset:
    """Extract the rows for one target; polarity +1 creating, -1 destroying.

    Creating targets label whether a clear bit turns on.  Entities whose
    bit is already set and observed to turn off are added as extra label-0
    rows: a creating schema firing there would resurrect the bit through
    the update's final OR, so such fires must be constrained away.  The
    extra rows can never collide with a positive row because the center
    cell's own attribute bit differs.  Destroying targets mirror the
    labels; a destroying fire on a clear bit is a no-op, so no extra rows
    are needed there.
    """
    x_words, curr, nxt, _, valid = buffer.stacked()
    width = buffer.spec.row_width
    want = 0 if polarity > 0 else 1
    sel = (curr[:, :, attribute] == want) & valid
    rows = unpack_rows(x_words[sel], width)
    raw = nxt[:, :, attribute][sel]
    labels = (raw if polarity > 0 else 1 - raw).astype(np.uint8)
    t_idx, e_idx = np.nonzero(sel)
    provenance = list(zip(t_idx.tolist(), e_idx.tolist()))
    if polarity > 0:
        extra = (curr[:, :, attribute] == 1) & valid & (nxt[:, :, attribute] == 0)
        if extra.any():
            rows = np.concatenate([rows, unpack_rows(x_words[extra], width)])
            labels = np.concatenate([labels, np.zeros(int(extra.sum()), np.uint8)])
            t2, e2 = np.nonzero(extra)
            provenance += list(zip(t2.tolist(), e2.tolist()))
    return AttributeDataset(rows, labels, provenance)


def reward_dataset(buffer: ReplayBuffer, sign: int) -> RewardDataset:
    x_words, _, _, rewards, _ = buffer.stacked()
    width = buffer.spec.row_width
    pos = rewards > 0 if sign > 0 else rewards < 0
    bags = [unpack_rows(x_words[i], width) for i in np.flatnonzero(pos)]
    neg = x_words[~pos]
    negatives = unpack_rows(neg.reshape(-1, neg.shape[-1]), width) if len(neg) else np.zeros(
        (0, width), np.uint8
    )
    return RewardDataset(bags, negatives)


# ---------------------------------------------------------------------------
# greedy schema induction

def _refine(seed_bits: np.ndarray, neg_words: np.ndarray) -> np.ndarray | None:
    """Shrink the seed row's full mask to an inclusion-minimal conjunction.

    Returns None when even the full mask fires on some negative row, i.e.
    a negative row contains every bit of the seed.

    Bits are cleared least-discriminative first: a bit absent from many
    negative rows is doing the rejection work and is tried last, so the
    surviving mask anchors on the bits that matter instead of incidental
    background bits that happen to share the seed's window.  Ties clear
    the higher index first, leaving the lowest-index bit on fully tied
    masks.
    """
    w = np.array(seed_bits, dtype=np.uint8)
    if w.sum() == 0:
        return None
    w_words = pack_rows(w[None])[0]
    set_bits = np.flatnonzero(w)
    if len(neg_words):
        miss = np.bitwise_count(~neg_words & w_words).sum(axis=1, dtype=np.int64)
        if (miss == 0).any():
            return None
        lacks_by_bit = {int(b): ~bit_column(neg_words, int(b)) for b in set_bits}
        order = sorted(
            (int(b) for b in set_bits),
            key=lambda b: (int(lacks_by_bit[b].sum()), -b),
        )
    else:
        miss = np.zeros(0, np.int64)
        lacks_by_bit = {int(b): np.zeros(0, bool) for b in set_bits}
        order = sorted((int(b) for b in set_bits), reverse=True)
    for b in order:
        if w.sum() == 1:
            break
        lacks = lacks_by_bit[b]
        if np.any((miss == 1) & lacks):
            continue
        w[b] = 0
        miss = miss - lacks
    return w


def learn_schema(
    dataset: AttributeDataset,
    existing: np.ndarray,
    rng: random.Random | None = None,
) -> np.ndarray | None:
    """Learn one schema for the first (or a seeded-random) uncovered positive.

    Returns None when no false negative remains or when the seed row is
    contradicted by a negative row that contains it.
    """
    _count_call()
    rows, labels = dataset.rows, dataset.labels
    if len(rows) == 0:
        return None
    rows_words = pack_rows(rows)
    pos_idx = np.flatnonzero(labels == 1)
    if len(pos_idx) == 0:
        return None
    if len(existing):
        fired = packed_matches(rows_words[pos_idx], pack_rows(existing)).any(axis=1)
        pos_idx = pos_idx[~fired]
        if len(pos_idx) == 0:
            return None
    seed = pos_idx[rng.randrange(len(pos_idx))] if rng is not None else pos_idx[0]
    neg_words = rows_words[labels == 0]
    return _refine(rows[seed], neg_words)


def learn_reward_schema(
    dataset: RewardDataset,
    existing: np.ndarray,
    rng: random.Random | None = None,
) -> np.ndarray | None:
    """Learn one schema firing inside an uncovered bag and on no negative row."""
    _count_call()
    if not dataset.bags:
        return None
    neg_words = pack_rows(dataset.negatives)
    existing_words = pack_rows(existing) if len(existing) else None
    open_bags = []
    for bag in dataset.bags:
        if existing_words is not None and len(bag):
            if packed_matches(pack_rows(bag), existing_words).any():
                continue
        open_bags.append(bag)
    if not open_bags:
        return None
    bag = open_bags[rng.randrange(len(open_bags))] if rng is not None else open_bags[0]
    for row in bag:
        w = _refine(row, neg_words)
        if w is not None:
            return w
    return None


# ---------------------------------------------------------------------------
# epoch-level learning

@dataclass
class LearnReport:
    pruned: int = 0
    added: dict[str, int] = field(default_factory=dict)
    residual: dict[str, int] = field(default_factory=dict)
    saturated: list[str] = field(default_factory=list)

    @property
    def total_added(self) -> int:
        return sum(self.added.values())


def _fires_any(neg_words: np.ndarray, schema_words: np.ndarray, chunk: int = 8192) -> np.ndarray:
    """Per schema, whether it fires on any of the given rows."""
    out = np.zeros(len(schema_words), dtype=bool)
    for lo in range(0, len(neg_words), chunk):
        out |= packed_matches(neg_words[lo:lo + chunk], schema_words).any(axis=0)
        if out.all():
            break
    return out


def _unique_rows(words: np.ndarray) -> np.ndarray:
    if len(words) <= 1:
        return words
    return np.unique(words, axis=0)


def _target_rows(buffer: ReplayBuffer, tag: str):
    """(rows_words, labels) for attribute tags, (bag word arrays, neg words) for rewards.

    Duplicate rows are collapsed (static regions repeat in almost every
    transition); firing and minimality only depend on the row sets.
    """
    spec = buffer.spec
    x_words, curr, nxt, rewards, valid = buffer.stacked()
    if tag in ("R+", "R-"):
        pos = rewards > 0 if tag == "R+" else rewards < 0
        bags = [x_words[i] for i in np.flatnonzero(pos)]
        neg = _unique_rows(x_words[~pos].reshape(-1, spec.packed_words))
        return bags, neg
    polarity = 1 if tag[1] == "+" else -1
    attribute = int(tag[2:])
    want = 0 if polarity > 0 else 1
    sel = (curr[:, :, attribute] == want) & valid
    raw = nxt[:, :, attribute][sel]
    labels = (raw if polarity > 0 else 1 - raw).astype(np.uint8)
    rows_words = x_words[sel]
    pos_rows = _unique_rows(rows_words[labels == 1])
    neg_rows = rows_words[labels == 0]
    if polarity > 0:
        # Active bits observed to turn off: a creating fire there would
        # wrongly resurrect them, so they join as label-0 rows.
        extra = (curr[:, :, attribute] == 1) & valid & (nxt[:, :, attribute] == 0)
        if extra.any():
            neg_rows = np.concatenate([neg_rows, x_words[extra]])
    neg_rows = _unique_rows(neg_rows)
    rows_words = np.concatenate([pos_rows, neg_rows])
    labels = np.concatenate(
        [np.ones(len(pos_rows), np.uint8), np.zeros(len(neg_rows), np.uint8)]
    )
    return rows_words, labels


def prune_false_positives(buffer: ReplayBuffer, params: ParameterSet) -> int:
    """Delete every stored schema that fires where its target says it must not."""
    _count_call()
    removed = 0
    for tag in params.tags():
        schemas = params.matrix(tag)
        if len(schemas) == 0:
            continue
        schema_words = params.packed(tag)
        if tag in ("R+", "R-"):
            _, neg_words = _target_rows(buffer, tag)
        else:
            rows_words, labels = _target_rows(buffer, tag)
            neg_words = rows_words[labels == 0]
        bad = _fires_any(neg_words, schema_words)
        if bad.any():
            removed += int(bad.sum())
            params.set_matrix(tag, schemas[~bad])
    return removed


def _learn_attribute_target(rows_words, labels, params: ParameterSet, tag: str):
    spec = params.spec
    pos_idx = np.flatnonzero(labels == 1)
    neg_words = rows_words[labels == 0]
    existing = params.matrix(tag)
    if len(pos_idx) == 0:
        return 0, 0, False
    covered = (
        packed_matches(rows_words[pos_idx], params.packed(tag)).any(axis=1)
        if len(existing)
        else np.zeros(len(pos_idx), dtype=bool)
    )
    unsolvable = np.zeros(len(pos_idx), dtype=bool)
    added = 0
    saturated = False
    while True:
        open_pos = np.flatnonzero(~covered & ~unsolvable)
        if len(open_pos) == 0:
            break
        if len(params.matrix(tag)) >= params.cap:
            saturated = True
            break
        i = open_pos[0]
        seed_bits = unpack_rows(rows_words[pos_idx[i]][None], spec.row_width)[0]
        w = _refine(seed_bits, neg_words)
        if w is None:
            # Contradictory data for this row; leave it as a residual miss.
            unsolvable[i] = True
            continue
        params.append_schema(tag, w)
        added += 1
        covered |= packed_matches(rows_words[pos_idx], pack_rows(w[None]))[:, 0]
    residual = int((~covered).sum())
    return added, residual, saturated


def _learn_reward_target(bags, neg_words, params: ParameterSet, tag: str):
    spec = params.spec
    if not bags:
        return 0, 0, False
    covered = [
        len(params.matrix(tag)) > 0 and bool(packed_matches(bag, params.packed(tag)).any())
        for bag in bags
    ]
    unsolvable = [False] * len(bags)
    added = 0
    saturated = False
    while True:
        open_bags = [i for i in range(len(bags)) if not covered[i] and not unsolvable[i]]
        if not open_bags:
            break
        if len(params.matrix(tag)) >= params.cap:
            saturated = True
            break
        i = open_bags[0]
        w = None
        for row_words in bags[i]:
            seed_bits = unpack_rows(row_words[None], spec.row_width)[0]
            w = _refine(seed_bits, neg_words)
            if w is not None:
                break
        if w is None:
            unsolvable[i] = True
            continue
        params.append_schema(tag, w)
        added += 1
        w_words = pack_rows(w[None])
        for k in range(len(bags)):
            if not covered[k] and packed_matches(bags[k], w_words).any():
                covered[k] = True
    residual = sum(1 for c in covered if not c)
    return added, residual, saturated


def learn_epoch(buffer: ReplayBuffer, params: ParameterSet) -> LearnReport:
    """One pass: prune contradicted schemas, then learn until no target has
    false negatives left or its matrix hits the cap."""
    _count_call()
    report = LearnReport()
    report.pruned = prune_false_positives(buffer, params)
    for tag in params.tags():
        if tag in ("R+", "R-"):
            bags, neg_words = _target_rows(buffer, tag)
            added, residual, saturated = _learn_reward_target(bags, neg_words, params, tag)
        else:
            rows_words, labels = _target_rows(buffer, tag)
            added, residual, saturated = _learn_attribute_target(rows_words, labels, params, tag)
        report.added[tag] = added
        report.residual[tag] = residual
        if saturated:
            report.saturated.append(tag)
    return report


# ---------------------------------------------------------------------------
# exhaustive oracle

def brute_force_oracle(dataset: AttributeDataset) -> list[tuple[np.ndarray, int]]:
    """Enumerate every conjunction mask; return the inclusion-minimal ones
    with zero false positives, paired with their positive coverage.

    Minimality is taken over non-empty masks: removing a bit must either
    empty the mask or make some negative row fire.  Guarded to D <= 16 and
    at most 4096 rows.
    """
    rows, labels = dataset.rows, dataset.labels
    n, d = rows.shape
    if d > 16 or n > 4096:
        raise ContractError("oracle guard: D <= 16 and rows <= 4096")
    if not (labels == 1).any():
        return []
    weights = (1 << np.arange(d)).astype(np.int64)
    row_ints = rows.astype(np.int64) @ weights
    neg = row_ints[labels == 0]
    pos = row_ints[labels == 1]
    total = 1 << d
    zero_fp = np.zeros(total, dtype=bool)
    coverage = np.zeros(total, dtype=np.int64)
    masks = np.arange(total, dtype=np.int64)
    chunk = 4096
    for lo in range(0, total, chunk):
        ms = masks[lo:lo + chunk]
        if len(neg):
            fires_neg = (ms[:, None] & ~neg[None, :]) == 0
            zero_fp[lo:lo + chunk] = ~fires_neg.any(axis=1)
        else:
            zero_fp[lo:lo + chunk] = True
        fires_pos = (ms[:, None] & ~pos[None, :]) == 0
        coverage[lo:lo + chunk] = fires_pos.sum(axis=1)
    results = []
    for m in range(1, total):
        if not zero_fp[m]:
            continue
        minimal = True
        mm = m
        while mm:
            bit = mm & -mm
            sub = m ^ bit
            if sub != 0 and zero_fp[sub]:
                minimal = False
                break
            mm ^= bit
        if minimal:
            mask = ((m >> np.arange(d)) & 1).astype(np.uint8)
            results.append((mask, int(coverage[m])))
    return results
