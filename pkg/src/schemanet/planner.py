"""Backtracing planner with per-layer joint action constraints.

Targets are the positive reward nodes, closest layer first.  Backtracing a
node tries, in order: its self-transition, action-independent schemas, any
schema when the layer is unconstrained (pinning the layer to that schema's
action), schemas matching the layer's existing constraint, and finally a
negotiated replan of every node committed to the conflicting constraint.
A failed negotiation restores all reachability marks and constraints it
touched.  The search memoizes marks within one target and is not
exhaustive; whatever it returns is re-checked against graph semantics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .forward import FactorGraph, NodeKey, SchemaInstance, simulate_actions


class PlanDepthExceeded(Exception):
    """Negotiation nesting hit the cap; the current target is abandoned."""


@dataclass
class Constraint:
    action: int
    committed: list[NodeKey] = field(default_factory=list)


@dataclass
class SearchState:
    constraints: list[Constraint | None]
    max_depth: int = 100
    depth: int = 0
    schema_evals: int = 0


@dataclass(frozen=True)
class Plan:
    actions: tuple[int, ...]
    target: NodeKey
    constrained_layers: tuple[int, ...]


def select_targets(graph: FactorGraph) -> list[NodeKey]:
    """All positive reward nodes, ascending layer."""
    return [node.key for node in graph.reward_nodes("+")]


def backtrace_schema(graph: FactorGraph, st: SearchState, schema: SchemaInstance) -> bool:
    """A schema is reachable iff every precondition node resolves reachable."""
    st.schema_evals += 1
    schema.is_reachable = True
    for key in schema.inputs:
        node = graph.nodes.get(key)
        if node is None:
            schema.is_reachable = False
            break
        if node.is_reachable is None:
            backtrace_node(graph, st, key)
        if not node.is_reachable:
            schema.is_reachable = False
            break
    return bool(schema.is_reachable)


def _try_schemas(
    graph: FactorGraph, st: SearchState, key: NodeKey, schemas: list[SchemaInstance]
) -> SchemaInstance | None:
    """First schema that backtraces successfully; marks the node on success."""
    node = graph.nodes[key]
    for schema in schemas:
        if backtrace_schema(graph, st, schema):
            node.is_reachable = True
            return schema
    return None


def backtrace_node_by_schemas(
    graph: FactorGraph, st: SearchState, key: NodeKey, schemas: list[SchemaInstance]
) -> bool:
    return _try_schemas(graph, st, key, schemas) is not None


def _copy_constraints(constraints: list[Constraint | None]) -> list[Constraint | None]:
    return [
        None if c is None else Constraint(c.action, list(c.committed)) for c in constraints
    ]


def backtrace_node(
    graph: FactorGraph, st: SearchState, key: NodeKey, desired: int | None = None
) -> bool:
    """Resolve one node's reachability, negotiating layer constraints as needed.

    With ``desired`` set, only schemas requiring that action are considered
    (the replanning mode used during negotiation).
    """
    node = graph.nodes[key]
    if node.layer <= 0:
        return bool(node.is_reachable)
    node.is_reachable = False

    if desired is not None:
        return backtrace_node_by_schemas(
            graph, st, key, [s for s in node.schemas if s.required_action == desired]
        )

    if node.self_transition is not None:
        src = graph.nodes.get(node.self_transition)
        if src is not None:
            if src.is_reachable is None:
                backtrace_node(graph, st, node.self_transition)
            if src.is_reachable:
                node.is_reachable = True
                return True

    if backtrace_node_by_schemas(
        graph, st, key, [s for s in node.schemas if s.required_action is None]
    ):
        return True

    slot = node.layer - 1
    dependent = [s for s in node.schemas if s.required_action is not None]
    constraint = st.constraints[slot]

    if constraint is None:
        won = _try_schemas(graph, st, key, dependent)
        if won is not None:
            st.constraints[slot] = Constraint(won.required_action, [key])
            return True
        return False

    if backtrace_node_by_schemas(
        graph, st, key, [s for s in dependent if s.required_action == constraint.action]
    ):
        constraint.committed.append(key)
        return True

    # Replan every node committed to this layer under an action all parties
    # can accept.
    committed_before = list(constraint.committed)
    mine = sorted({s.required_action for s in dependent} - {constraint.action})
    negotiated = [
        a
        for a in mine
        if all(
            any(s.required_action == a for s in graph.nodes[ck].schemas)
            for ck in committed_before
        )
    ]
    st.depth += 1
    try:
        if st.depth > st.max_depth:
            raise PlanDepthExceeded()
        for action in negotiated:
            marks = graph.marks_snapshot()
            saved = _copy_constraints(st.constraints)
            backtrace_node(graph, st, key, desired=action)
            ok = bool(node.is_reachable)
            if ok:
                for ck in committed_before:
                    backtrace_node(graph, st, ck, desired=action)
                    if not graph.nodes[ck].is_reachable:
                        ok = False
                        break
            if ok:
                st.constraints[slot] = Constraint(action, committed_before + [key])
                return True
            graph.restore_marks(marks)
            st.constraints = saved
        return False
    finally:
        st.depth -= 1


def plan_for_targets(
    graph: FactorGraph, targets: list[NodeKey], max_depth: int = 100
) -> Plan | None:
    """Backtrace each target in the given order; first validated plan wins.

    Reachability marks and constraints are reset per target so one failed
    search cannot poison the next.  Unconstrained layers run noop.  A plan
    is returned only if replaying its actions through the graph's factors
    actually activates the target.
    """
    for target in targets:
        layer = graph.nodes[target].layer
        graph.reset_marks()
        st = SearchState(
            constraints=[None] * max(graph.horizon, layer), max_depth=max_depth
        )
        try:
            ok = backtrace_node(graph, st, target)
        except PlanDepthExceeded:
            continue
        if not ok:
            continue
        actions = tuple(
            st.constraints[t].action if st.constraints[t] is not None else graph.noop_action
            for t in range(layer)
        )
        if target not in simulate_actions(graph, list(actions)):
            continue
        return Plan(
            actions=actions,
            target=target,
            constrained_layers=tuple(
                t for t in range(layer) if st.constraints[t] is not None
            ),
        )
    return None


def plan(graph: FactorGraph, max_depth: int = 100) -> Plan | None:
    """Plan for the queued positive reward nodes, closest layer first."""
    return plan_for_targets(graph, select_targets(graph), max_depth=max_depth)
