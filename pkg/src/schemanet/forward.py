"""Multi-step prediction and the layered factor graph the planner searches.

Planning-mode prediction is deliberately optimistic: creation is computed
with every action bit set at once, destruction under the noop action, so
one unroll superimposes the consequences of all action choices and the
planner resolves which single action per layer actually gets taken.

Graph layers: -1 and 0 hold the observed frame stack (marked reachable),
layers 1..T hold predictions.  A reward node at layer L is reached by a
plan of exactly L actions, one per layer transition.  Action variables are
not materialized as nodes; they live in the planner's per-layer constraint
array.  Self-transitions are granted under the noop assumption, so they
are approximate with respect to destroying schemas that require a move.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    ALL_ACTIONS,
    ContractError,
    EnvSpec,
    FrameStack,
    ParameterSet,
    build_augmented,
    decode_bit,
    next_state,
    pack_rows,
    packed_matches,
)

NodeKey = tuple  # ("attr", layer, entity, attribute) | ("reward", layer, "+"|"-")


# ---------------------------------------------------------------------------
# single-step prediction

@dataclass
class Prediction:
    created: np.ndarray                     # (N, M) uint8
    destroyed: np.ndarray                   # (N, M) uint8
    next: np.ndarray                        # (N, M) uint8
    fired_creating: list[tuple[int, int, int]]    # (attribute, entity, column)
    fired_destroying: list[tuple[int, int, int]]
    fired_reward: dict[str, list[tuple[int, int]]]  # sign -> (entity, column)


def predict_step(frames: FrameStack, params: ParameterSet, action: int | None = None) -> Prediction:
    """Predict one step ahead.

    With action=None, creation superimposes all actions and destruction
    assumes noop (planning mode).  With a concrete action, both use it
    (replay/accuracy mode).
    """
    spec = params.spec
    x_plus = build_augmented(frames, ALL_ACTIONS if action is None else action, spec)
    if action is None:
        x_minus = build_augmented(frames, spec.noop_action, spec)
    else:
        x_minus = x_plus
    xp_words = pack_rows(x_plus)
    xm_words = pack_rows(x_minus)

    n, m = spec.num_entities, spec.num_types
    created = np.zeros((n, m), np.uint8)
    destroyed = np.zeros((n, m), np.uint8)
    fired_creating: list[tuple[int, int, int]] = []
    fired_destroying: list[tuple[int, int, int]] = []
    for j in range(m):
        hits = packed_matches(xp_words, params.packed(f"W+{j}"))
        if hits.size:
            created[:, j] = hits.any(axis=1)
            for e, k in np.argwhere(hits):
                fired_creating.append((j, int(e), int(k)))
        hits = packed_matches(xm_words, params.packed(f"W-{j}"))
        if hits.size:
            destroyed[:, j] = hits.any(axis=1)
            for e, k in np.argwhere(hits):
                fired_destroying.append((j, int(e), int(k)))

    fired_reward: dict[str, list[tuple[int, int]]] = {"+": [], "-": []}
    for sign, tag in (("+", "R+"), ("-", "R-")):
        hits = packed_matches(xp_words, params.packed(tag))
        if hits.size:
            for e, k in np.argwhere(hits):
                fired_reward[sign].append((int(e), int(k)))

    return Prediction(
        created=created,
        destroyed=destroyed,
        next=next_state(frames.curr, created, destroyed),
        fired_creating=fired_creating,
        fired_destroying=fired_destroying,
        fired_reward=fired_reward,
    )


@dataclass
class AccuracyReport:
    per_attribute: list[float]
    overall: float
    transitions: int

    def worst(self) -> tuple[int, float]:
        j = int(np.argmin(self.per_attribute))
        return j, self.per_attribute[j]


def held_out_accuracy(transitions, params: ParameterSet) -> AccuracyReport:
    """Replay transitions with their actual action and score bit agreement.

    Unlike planning-mode prediction this uses the taken action for both
    creation and destruction.  Entities a transition marks invalid (respawn
    teleport cells) are left out, matching the learner's view of the data.
    """
    items = getattr(transitions, "transitions", transitions)
    spec = params.spec
    m = spec.num_types
    good = np.zeros(m, np.int64)
    seen = np.zeros(m, np.int64)
    count = 0
    for tr in items:
        pred = predict_step(tr.frames, params, action=tr.action)
        agree = pred.next == np.asarray(tr.next, np.uint8)
        if tr.invalid_entities:
            keep = np.ones(agree.shape[0], bool)
            keep[list(tr.invalid_entities)] = False
            agree = agree[keep]
        good += agree.sum(axis=0)
        seen += agree.shape[0]
        count += 1
    per = [float(g) / s if s else 1.0 for g, s in zip(good, seen)]
    overall = float(good.sum()) / float(seen.sum()) if seen.sum() else 1.0
    return AccuracyReport(per_attribute=per, overall=overall, transitions=count)


# ---------------------------------------------------------------------------
# factor graph

@dataclass
class SchemaInstance:
    output: NodeKey
    inputs: tuple[NodeKey, ...]
    required_action: int | None
    source: tuple[str, int] | None = None    # (matrix tag, column), for debugging
    is_reachable: bool | None = None


@dataclass
class Node:
    key: NodeKey
    layer: int
    self_transition: NodeKey | None = None
    schemas: list[SchemaInstance] = field(default_factory=list)
    is_reachable: bool | None = None


class FactorGraph:
    """Layered nodes connected by schema instances and self-transitions."""

    def __init__(self, num_actions: int, noop_action: int, horizon: int):
        self.num_actions = num_actions
        self.noop_action = noop_action
        self.horizon = horizon
        self.nodes: dict[NodeKey, Node] = {}

    def add_observed(self, layer: int, entity: int, attribute: int) -> Node:
        if layer > 0:
            raise ContractError("observed nodes live at layers <= 0")
        key = ("attr", layer, entity, attribute)
        node = Node(key=key, layer=layer, is_reachable=True)
        self.nodes[key] = node
        return node

    def ensure_attr(self, layer: int, entity: int, attribute: int) -> Node:
        key = ("attr", layer, entity, attribute)
        node = self.nodes.get(key)
        if node is None:
            node = Node(key=key, layer=layer)
            self.nodes[key] = node
        return node

    def ensure_reward(self, layer: int, sign: str) -> Node:
        key = ("reward", layer, sign)
        node = self.nodes.get(key)
        if node is None:
            node = Node(key=key, layer=layer)
            self.nodes[key] = node
        return node

    def reward_nodes(self, sign: str) -> list[Node]:
        out = [n for k, n in self.nodes.items() if k[0] == "reward" and k[2] == sign]
        out.sort(key=lambda n: n.layer)
        return out

    def reset_marks(self) -> None:
        """Forget reachability of every predicted node; observed stay True."""
        for node in self.nodes.values():
            if node.layer >= 1:
                node.is_reachable = None
            for schema in node.schemas:
                schema.is_reachable = None

    def marks_snapshot(self) -> dict[NodeKey, bool | None]:
        return {key: node.is_reachable for key, node in self.nodes.items()}

    def restore_marks(self, snapshot: dict[NodeKey, bool | None]) -> None:
        for key, value in snapshot.items():
            self.nodes[key].is_reachable = value


def _decoded_inputs(mask: np.ndarray, spec: EnvSpec):
    """Split a schema mask into window bit descriptors and its action, if any."""
    window: list[tuple[int, int, int, int]] = []   # (layer offset, dr, dc, attribute)
    action = None
    for bit in np.flatnonzero(mask):
        got = decode_bit(int(bit), spec)
        if got[0] == "action":
            action = got[1]
        else:
            frame, dr, dc, attr = got
            window.append((-1 if frame == "prev" else 0, dr, dc, attr))
    return window, action


def _instance_for(
    spec: EnvSpec,
    decoded,
    entity: int,
    out_key: NodeKey,
    layer: int,
    source: tuple[str, int],
) -> SchemaInstance:
    window, action = decoded
    r, c = divmod(entity, spec.grid_width)
    inputs = []
    for off, dr, dc, attr in window:
        nr, nc = r + dr, c + dc
        if not (0 <= nr < spec.grid_height and 0 <= nc < spec.grid_width):
            raise ContractError("fired schema references an off-grid cell")
        inputs.append(("attr", layer + off, nr * spec.grid_width + nc, attr))
    return SchemaInstance(
        output=out_key,
        inputs=tuple(inputs),
        required_action=action,
        source=source,
    )


def unroll(frames: FrameStack, params: ParameterSet, horizon: int) -> FactorGraph:
    """Predict ``horizon`` steps ahead, recording fired schemas as factors.

    Every attribute that is active at a layer and not hit by any destroying
    schema under the noop assumption gains a self-transition at the next
    layer.
    """
    if horizon < 1:
        raise ContractError("horizon must be >= 1")
    spec = params.spec
    graph = FactorGraph(spec.num_actions, spec.noop_action, horizon)

    for layer, frame in ((-1, frames.prev), (0, frames.curr)):
        for e, j in np.argwhere(np.asarray(frame, np.uint8)):
            graph.add_observed(layer, int(e), int(j))

    decoded_cache: dict[tuple[str, int], tuple] = {}

    def decoded(tag: str, col: int):
        hit = decoded_cache.get((tag, col))
        if hit is None:
            hit = _decoded_inputs(params.matrix(tag)[col], spec)
            decoded_cache[(tag, col)] = hit
        return hit

    prev, curr = np.asarray(frames.prev, np.uint8), np.asarray(frames.curr, np.uint8)
    for t in range(horizon):
        pred = predict_step(FrameStack(prev, curr), params)
        out_layer = t + 1
        for e, j in np.argwhere(pred.next):
            graph.ensure_attr(out_layer, int(e), int(j))
        # survivors under the noop assumption
        for e, j in np.argwhere((curr == 1) & (pred.destroyed == 0)):
            node = graph.ensure_attr(out_layer, int(e), int(j))
            node.self_transition = ("attr", t, int(e), int(j))
        for j, e, k in pred.fired_creating:
            key = ("attr", out_layer, e, j)
            graph.nodes[key].schemas.append(
                _instance_for(spec, decoded(f"W+{j}", k), e, key, t, (f"W+{j}", k))
            )
        for sign in ("+", "-"):
            for e, k in pred.fired_reward[sign]:
                node = graph.ensure_reward(out_layer, sign)
                tag = "R+" if sign == "+" else "R-"
                node.schemas.append(
                    _instance_for(spec, decoded(tag, k), e, node.key, t, (tag, k))
                )
        prev, curr = curr, pred.next
    return graph


# ---------------------------------------------------------------------------
# graph-level semantics

def simulate_actions(graph: FactorGraph, actions: list[int]) -> set[NodeKey]:
    """Activate nodes bottom-up under one concrete action per layer.

    A node activates when its self-transition input is active or when some
    schema instance whose action requirement matches the layer's action has
    all inputs active.  Returns the set of active node keys, observed layers
    included.
    """
    active: set[NodeKey] = {
        key for key, node in graph.nodes.items() if node.layer <= 0 and node.is_reachable
    }
    by_layer: dict[int, list[Node]] = {}
    for node in graph.nodes.values():
        if node.layer >= 1:
            by_layer.setdefault(node.layer, []).append(node)
    for layer in range(1, len(actions) + 1):
        taken = actions[layer - 1]
        for node in by_layer.get(layer, []):
            on = node.self_transition is not None and node.self_transition in active
            if not on:
                for schema in node.schemas:
                    if schema.required_action not in (None, taken):
                        continue
                    if all(inp in active for inp in schema.inputs):
                        on = True
                        break
            if on:
                active.add(node.key)
    return active


# ---------------------------------------------------------------------------
# text dump

def graph_to_text(graph: FactorGraph) -> str:
    """Line-oriented dump: one node or factor per line, deterministic order."""
    lines = [
        f"graph v1 actions={graph.num_actions} noop={graph.noop_action} "
        f"horizon={graph.horizon}"
    ]

    def key_str(key: NodeKey) -> str:
        if key[0] == "attr":
            return f"{key[1]}:{key[2]}:{key[3]}"
        return f"{key[1]}:r{key[2]}"

    for key in sorted(graph.nodes, key=lambda k: (k[1], str(k))):
        node = graph.nodes[key]
        if node.layer <= 0:
            lines.append(f"obs {key_str(key)}")
            continue
        kind = "attr" if key[0] == "attr" else "reward"
        lines.append(f"node {kind} {key_str(key)}")
        if node.self_transition is not None:
            lines.append(f"self {key_str(key)} <- {key_str(node.self_transition)}")
        for schema in node.schemas:
            act = "-" if schema.required_action is None else str(schema.required_action)
            ins = ",".join(key_str(i) for i in schema.inputs)
            lines.append(f"factor {key_str(key)} action={act} inputs={ins}")
    return "\n".join(lines) + "\n"


def _parse_key(text: str) -> NodeKey:
    parts = text.split(":")
    layer = int(parts[0])
    if parts[1].startswith("r"):
        return ("reward", layer, parts[1][1:])
    return ("attr", layer, int(parts[1]), int(parts[2]))


def graph_from_text(text: str) -> FactorGraph:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = lines[0].split()
    if header[0] != "graph" or header[1] != "v1":
        raise ContractError("not a graph dump")
    opts = dict(item.split("=") for item in header[2:])
    graph = FactorGraph(int(opts["actions"]), int(opts["noop"]), int(opts["horizon"]))
    for line in lines[1:]:
        parts = line.split()
        if parts[0] == "obs":
            key = _parse_key(parts[1])
            graph.add_observed(key[1], key[2], key[3])
        elif parts[0] == "node":
            key = _parse_key(parts[2])
            if key[0] == "attr":
                graph.ensure_attr(key[1], key[2], key[3])
            else:
                graph.ensure_reward(key[1], key[2])
        elif parts[0] == "self":
            key = _parse_key(parts[1])
            graph.nodes[key].self_transition = _parse_key(parts[3])
        elif parts[0] == "factor":
            key = _parse_key(parts[1])
            act_txt = parts[2].split("=", 1)[1]
            action = None if act_txt == "-" else int(act_txt)
            ins_txt = parts[3].split("=", 1)[1]
            inputs = tuple(_parse_key(p) for p in ins_txt.split(",")) if ins_txt else ()
            graph.nodes[key].schemas.append(
                SchemaInstance(output=key, inputs=inputs, required_action=action)
            )
        else:
            raise ContractError(f"unknown dump line: {line}")
    return graph
