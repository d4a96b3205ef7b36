"""Bit-level schema algebra over windowed binary state matrices.

State matrices hold one row per grid cell (an entity) and one column per
attribute (one-hot object type including a void flag).  Prediction works
on augmented rows: per entity, the attribute vectors of its square window
in the two most recent frames, then a one-hot action block.  A schema is
a conjunction mask over such a row; matrices of schemas OR their results.

Augmented row layout (width D = 2*M*R + A, the persistence contract):

    [ prev-frame window | curr-frame window | action block ]

Each frame window lists the R = window_side**2 window cells in row-major
order with the M attribute bits contiguous per cell.  Off-grid window
cells contribute all-zero blocks, so a schema bit can never be satisfied
outside the grid.  Rows are bit-packed into uint64 words on the hot path;
packing is internal, the bit layout above is the contract.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

# Selector for the action block: superimpose every action bit.
ALL_ACTIONS = -1


class ConfigurationError(ValueError):
    """Dimensions or settings are inconsistent."""


class ContractError(ValueError):
    """An operation was called with mismatched arguments."""


@dataclass(frozen=True)
class EnvSpec:
    """Grid geometry and encoding sizes shared by every component."""

    grid_width: int
    grid_height: int
    num_types: int
    num_actions: int
    window_side: int = 7
    noop_action: int = 0

    def __post_init__(self):
        if self.window_side < 1 or self.window_side % 2 == 0:
            raise ConfigurationError("window_side must be odd and >= 1")
        if self.num_types < 2:
            raise ConfigurationError("need at least one real type plus void")
        if self.grid_width < 1 or self.grid_height < 1:
            raise ConfigurationError("grid must be non-empty")
        if self.num_actions < 1:
            raise ConfigurationError("need at least one action")
        if not 0 <= self.noop_action < self.num_actions:
            raise ConfigurationError("noop_action outside the action set")

    @property
    def num_entities(self) -> int:
        return self.grid_width * self.grid_height

    @property
    def window_cells(self) -> int:
        return self.window_side ** 2

    @property
    def frame_block(self) -> int:
        return self.num_types * self.window_cells

    @property
    def row_width(self) -> int:
        return 2 * self.frame_block + self.num_actions

    @property
    def packed_words(self) -> int:
        return (self.row_width + 63) // 64


@dataclass(frozen=True)
class FrameStack:
    """The two most recent state matrices, oldest first."""

    prev: np.ndarray
    curr: np.ndarray

    def __post_init__(self):
        if self.prev.shape != self.curr.shape:
            raise ConfigurationError("frame stack shapes differ")


def state_from_types(type_map: np.ndarray, spec: EnvSpec) -> np.ndarray:
    """One-hot encode a (H, W) integer type map into an (N, M) state matrix."""
    if type_map.shape != (spec.grid_height, spec.grid_width):
        raise ConfigurationError(
            f"type map shape {type_map.shape} does not match grid "
            f"{spec.grid_height}x{spec.grid_width}"
        )
    flat = np.asarray(type_map, dtype=np.int64).ravel()
    if flat.min() < 0 or flat.max() >= spec.num_types:
        raise ConfigurationError("type id outside [0, num_types)")
    return np.eye(spec.num_types, dtype=np.uint8)[flat]


def is_one_hot(state: np.ndarray) -> bool:
    return bool(np.all(state.sum(axis=1) == 1))


@lru_cache(maxsize=None)
def neighbor_map(spec: EnvSpec) -> np.ndarray:
    """(N, R) entity index of each window cell, -1 where the cell is off-grid.

    Window cells are ordered row-major over offsets, matching the augmented
    row layout.
    """
    h, w, side = spec.grid_height, spec.grid_width, spec.window_side
    half = side // 2
    rows, cols = np.divmod(np.arange(h * w), w)
    offs = np.arange(-half, half + 1)
    nr = rows[:, None, None] + offs[None, :, None]
    nc = cols[:, None, None] + offs[None, None, :]
    idx = nr * w + nc
    idx[(nr < 0) | (nr >= h) | (nc < 0) | (nc >= w)] = -1
    out = idx.reshape(h * w, side * side)
    out.setflags(write=False)
    return out


def windowed_frame(frame: np.ndarray, spec: EnvSpec) -> np.ndarray:
    """Gather each entity's window of attribute vectors into (N, M*R) rows."""
    n = spec.num_entities
    if frame.shape != (n, spec.num_types):
        raise ConfigurationError(f"frame shape {frame.shape} does not match spec")
    idx = neighbor_map(spec)
    padded = np.concatenate(
        [np.asarray(frame, dtype=np.uint8), np.zeros((1, spec.num_types), np.uint8)]
    )
    safe = np.where(idx < 0, n, idx)
    return padded[safe].reshape(n, spec.frame_block)


def build_augmented(frames: FrameStack, action: int, spec: EnvSpec) -> np.ndarray:
    """Assemble the (N, D) augmented matrix for one action selector.

    ``action`` is a concrete action id, or ALL_ACTIONS to set every action
    bit on every row (the superimposed prediction mode).
    """
    if action != ALL_ACTIONS and not 0 <= action < spec.num_actions:
        raise ConfigurationError(f"action {action} outside the action set")
    n, mb = spec.num_entities, spec.frame_block
    out = np.zeros((n, spec.row_width), dtype=np.uint8)
    out[:, :mb] = windowed_frame(frames.prev, spec)
    out[:, mb:2 * mb] = windowed_frame(frames.curr, spec)
    if action == ALL_ACTIONS:
        out[:, 2 * mb:] = 1
    else:
        out[:, 2 * mb + action] = 1
    return out


def decode_bit(bit: int, spec: EnvSpec):
    """Map an augmented-row bit index back to its meaning.

    Returns ("prev" | "curr", d_row, d_col, attribute) for window bits and
    ("action", action_id) for action bits.
    """
    if not 0 <= bit < spec.row_width:
        raise ContractError(f"bit {bit} outside row of width {spec.row_width}")
    mb = spec.frame_block
    if bit >= 2 * mb:
        return ("action", bit - 2 * mb)
    frame = "prev" if bit < mb else "curr"
    within = bit % mb
    cell, attr = divmod(within, spec.num_types)
    half = spec.window_side // 2
    return (frame, cell // spec.window_side - half, cell % spec.window_side - half, attr)


def encode_bit(spec: EnvSpec, frame: str, d_row: int, d_col: int, attr: int) -> int:
    """Inverse of decode_bit for window bits; frame is "prev" or "curr"."""
    half = spec.window_side // 2
    if not (-half <= d_row <= half and -half <= d_col <= half):
        raise ContractError("offset outside the window")
    if not 0 <= attr < spec.num_types:
        raise ContractError("attribute outside range")
    cell = (d_row + half) * spec.window_side + (d_col + half)
    base = 0 if frame == "prev" else spec.frame_block
    return base + cell * spec.num_types + attr


def action_bit(spec: EnvSpec, action: int) -> int:
    """Augmented-row index of one action's bit."""
    if not 0 <= action < spec.num_actions:
        raise ContractError("action outside range")
    return 2 * spec.frame_block + action


# ---------------------------------------------------------------------------
# bit packing

def packed_width(width: int) -> int:
    return (width + 63) // 64


def pack_rows(bits: np.ndarray) -> np.ndarray:
    """Pack (..., D) 0/1 rows into (..., ceil(D/64)) little-endian uint64."""
    bits = np.ascontiguousarray(bits, dtype=np.uint8)
    packed = np.packbits(bits, axis=-1, bitorder="little")
    want = packed_width(bits.shape[-1]) * 8
    if packed.shape[-1] < want:
        pad = np.zeros(packed.shape[:-1] + (want - packed.shape[-1],), np.uint8)
        packed = np.concatenate([packed, pad], axis=-1)
    return np.ascontiguousarray(packed).view("<u8")


def unpack_rows(words: np.ndarray, width: int) -> np.ndarray:
    """Inverse of pack_rows, returning (..., width) uint8 rows."""
    as_bytes = np.ascontiguousarray(words).view(np.uint8)
    bits = np.unpackbits(as_bytes, axis=-1, bitorder="little")
    return bits[..., :width]


def packed_matches(x_words: np.ndarray, s_words: np.ndarray) -> np.ndarray:
    """(rows, schemas) boolean: schema k's required bits all present in row i."""
    n, k = x_words.shape[0], s_words.shape[0]
    if k == 0 or n == 0:
        return np.zeros((n, k), dtype=bool)
    nx = ~x_words
    miss = (nx[:, 0, None] & s_words[None, :, 0]) != 0
    for w in range(1, x_words.shape[1]):
        miss |= (nx[:, w, None] & s_words[None, :, w]) != 0
    return ~miss


def bit_column(words: np.ndarray, bit: int) -> np.ndarray:
    """Extract one bit column from packed rows as a boolean vector."""
    return (words[:, bit >> 6] >> np.uint64(bit & 63)) & np.uint64(1) != 0


def popcount_rows(words: np.ndarray) -> np.ndarray:
    """Per-row popcount of packed rows."""
    return np.bitwise_count(words).sum(axis=-1).astype(np.int64)


# ---------------------------------------------------------------------------
# schema algebra

def schema_fires(row: np.ndarray, mask: np.ndarray) -> bool:
    """True iff every bit required by ``mask`` is present in ``row``."""
    row = np.asarray(row, dtype=np.uint8)
    mask = np.asarray(mask, dtype=np.uint8)
    if row.shape != mask.shape:
        raise ContractError(f"row length {row.shape} != mask length {mask.shape}")
    return not bool(np.any((mask == 1) & (row == 0)))


def schema_matches(x: np.ndarray, schemas: np.ndarray) -> np.ndarray:
    """(N, K) boolean fire table of every schema row against every input row."""
    if len(schemas) and schemas.shape[1] != x.shape[1]:
        raise ContractError("row width mismatch")
    if len(schemas) == 0:
        return np.zeros((x.shape[0], 0), dtype=bool)
    return packed_matches(pack_rows(x), pack_rows(schemas))


def apply_schema_matrix(x: np.ndarray, schemas: np.ndarray) -> np.ndarray:
    """OR across schemas of their conjunction over each row: (N,) uint8."""
    return schema_matches(x, schemas).any(axis=1).astype(np.uint8)


def next_state(curr: np.ndarray, created: np.ndarray, destroyed: np.ndarray) -> np.ndarray:
    """Apply destruction then creation, clipping to {0, 1} after each step.

    Equivalent to (curr AND NOT destroyed) OR created.  The result is a
    prediction and may violate the one-hot row invariant.
    """
    if curr.shape != created.shape or curr.shape != destroyed.shape:
        raise ContractError("delta shapes do not match the state")
    c = curr.astype(bool)
    return ((c & ~destroyed.astype(bool)) | created.astype(bool)).astype(np.uint8)


def reward_fires(x: np.ndarray, schemas: np.ndarray) -> bool:
    """True iff any schema fires on any row of the augmented matrix."""
    return bool(schema_matches(x, schemas).any())


# ---------------------------------------------------------------------------
# parameter set

def matrix_tags(num_types: int) -> list[str]:
    """Canonical matrix naming, also used by the persistence format."""
    return (
        [f"W+{j}" for j in range(num_types)]
        + [f"W-{j}" for j in range(num_types)]
        + ["R+", "R-"]
    )


@dataclass
class ParameterSet:
    """Creating/destroying schema matrices per attribute plus reward matrices.

    Matrices are stored schemas-as-rows, shape (k, D).  Arrays are treated
    as immutable; mutation replaces the whole matrix so packed caches stay
    coherent.
    """

    spec: EnvSpec
    creating: list[np.ndarray]
    destroying: list[np.ndarray]
    reward_pos: np.ndarray
    reward_neg: np.ndarray
    cap: int = 500
    _packed: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def empty(cls, spec: EnvSpec, cap: int = 500) -> "ParameterSet":
        zero = lambda: np.zeros((0, spec.row_width), dtype=np.uint8)
        return cls(
            spec=spec,
            creating=[zero() for _ in range(spec.num_types)],
            destroying=[zero() for _ in range(spec.num_types)],
            reward_pos=zero(),
            reward_neg=zero(),
            cap=cap,
        )

    def tags(self) -> list[str]:
        return matrix_tags(self.spec.num_types)

    def matrix(self, tag: str) -> np.ndarray:
        if tag == "R+":
            return self.reward_pos
        if tag == "R-":
            return self.reward_neg
        kind, j = tag[:2], int(tag[2:])
        if kind == "W+":
            return self.creating[j]
        if kind == "W-":
            return self.destroying[j]
        raise ContractError(f"unknown matrix tag {tag!r}")

    def set_matrix(self, tag: str, arr: np.ndarray) -> None:
        arr = np.ascontiguousarray(arr, dtype=np.uint8)
        self._validate_matrix(tag, arr)
        if tag == "R+":
            self.reward_pos = arr
        elif tag == "R-":
            self.reward_neg = arr
        elif tag.startswith("W+"):
            self.creating[int(tag[2:])] = arr
        elif tag.startswith("W-"):
            self.destroying[int(tag[2:])] = arr
        else:
            raise ContractError(f"unknown matrix tag {tag!r}")
        self._packed.pop(tag, None)

    def append_schema(self, tag: str, mask: np.ndarray) -> None:
        self.set_matrix(tag, np.vstack([self.matrix(tag), mask[None, :]]))

    def packed(self, tag: str) -> np.ndarray:
        arr = self.matrix(tag)
        hit = self._packed.get(tag)
        if hit is not None and hit[0] is arr:
            return hit[1]
        packed = pack_rows(arr) if len(arr) else np.zeros(
            (0, self.spec.packed_words), dtype="<u8"
        )
        self._packed[tag] = (arr, packed)
        return packed

    def schema_counts(self) -> dict[str, int]:
        return {tag: len(self.matrix(tag)) for tag in self.tags()}

    def _validate_matrix(self, tag: str, arr: np.ndarray) -> None:
        d = self.spec.row_width
        if arr.ndim != 2 or arr.shape[1] != d:
            raise ConfigurationError(f"{tag}: schema matrix must be (k, {d})")
        if len(arr) > self.cap:
            raise ConfigurationError(f"{tag}: {len(arr)} schemas exceed cap {self.cap}")
        if len(arr):
            if (arr.sum(axis=1) == 0).any():
                raise ConfigurationError(f"{tag}: empty conjunction is forbidden")
            action_bits = arr[:, 2 * self.spec.frame_block:].sum(axis=1)
            if (action_bits > 1).any():
                raise ConfigurationError(f"{tag}: schema requires more than one action")

    def validate(self) -> None:
        for tag in self.tags():
            self._validate_matrix(tag, self.matrix(tag))
