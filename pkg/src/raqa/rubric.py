"""Steps and scoring rubric as a per-video directed acyclic graph.

A task-level rubric (step-type catalog plus stage groupings) is loaded from
JSON once; each video's ordered step list is then turned into its own DAG:
one leaf per performed step, one intermediate node per occupied stage, one
root. Steps whose type belongs to no stage connect directly to the root.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, ContractError

LEAF = "leaf"
INTERMEDIATE = "intermediate"
ROOT = "root"


@dataclass(frozen=True)
class StepType:
    id: int
    name: str


@dataclass(frozen=True)
class Stage:
    id: str
    members: tuple[int, ...]


@dataclass(frozen=True)
class RubricSpec:
    step_types: tuple[StepType, ...]
    stages: tuple[Stage, ...]
    difficulty_multiplier: bool = False
    ordered: bool = True  # False disables the order-based auxiliary losses

    def type_ids(self) -> set[int]:
        return {t.id for t in self.step_types}

    def stage_of(self, type_id: int) -> str | None:
        for stage in self.stages:
            if type_id in stage.members:
                return stage.id
        return None


@dataclass(frozen=True)
class DagNode:
    id: int
    kind: str
    step_type: int | None = None  # leaves only
    stage: str | None = None  # intermediates only


@dataclass(frozen=True)
class RubricDag:
    nodes: tuple[DagNode, ...]
    edges: tuple[tuple[int, int], ...]
    topo_order: tuple[int, ...]

    def leaf_ids(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind == LEAF]

    def root_id(self) -> int:
        return next(n.id for n in self.nodes if n.kind == ROOT)

    def predecessors(self, node_id: int) -> list[int]:
        return [a for a, b in self.edges if b == node_id]


_RUBRIC_KEYS = {"step_types", "stages", "difficulty_multiplier", "ordered"}


def rubric_from_dict(obj: dict) -> RubricSpec:
    if not isinstance(obj, dict):
        raise ConfigError("rubric spec must be a JSON object")
    unknown = set(obj) - _RUBRIC_KEYS
    if unknown:
        raise ConfigError(f"unknown rubric keys: {sorted(unknown)}")
    try:
        step_types = tuple(StepType(int(t["id"]), str(t["name"])) for t in obj["step_types"])
        stages = tuple(
            Stage(str(s["id"]), tuple(int(m) for m in s["members"]))
            for s in obj.get("stages", [])
        )
    except (KeyError, TypeError) as e:
        raise ConfigError(f"malformed rubric spec: {e}") from e
    spec = RubricSpec(
        step_types=step_types,
        stages=stages,
        difficulty_multiplier=bool(obj.get("difficulty_multiplier", False)),
        ordered=bool(obj.get("ordered", True)),
    )
    _validate_spec(spec)
    return spec


def rubric_to_dict(spec: RubricSpec) -> dict:
    return {
        "step_types": [{"id": t.id, "name": t.name} for t in spec.step_types],
        "stages": [{"id": s.id, "members": list(s.members)} for s in spec.stages],
        "difficulty_multiplier": spec.difficulty_multiplier,
        "ordered": spec.ordered,
    }


def load_rubric_spec(path: str | Path) -> RubricSpec:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"rubric spec is not valid JSON: {e}") from e
    return rubric_from_dict(obj)


def save_rubric_spec(spec: RubricSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(rubric_to_dict(spec), indent=2) + "\n")


def _validate_spec(spec: RubricSpec) -> None:
    ids = [t.id for t in spec.step_types]
    if len(ids) != len(set(ids)):
        raise ConfigError("duplicate step-type ids in rubric")
    stage_ids = [s.id for s in spec.stages]
    if len(stage_ids) != len(set(stage_ids)):
        raise ConfigError("duplicate stage ids in rubric")
    known = set(ids)
    seen: set[int] = set()
    for stage in spec.stages:
        if not stage.members:
            raise ConfigError(f"stage '{stage.id}' has no members")
        for m in stage.members:
            if m not in known:
                raise ConfigError(f"stage '{stage.id}' references unknown step type {m}")
            if m in seen:
                raise ConfigError(f"step type {m} appears in more than one stage")
            seen.add(m)


def build_dag(spec: RubricSpec, steps: list[int]) -> RubricDag:
    """DAG for one video: `steps` is the ordered list of performed step-type ids."""
    if not steps:
        raise ConfigError("empty step list")
    known = spec.type_ids()
    for s in steps:
        if s not in known:
            raise ConfigError(f"step type {s} not in rubric")

    nodes: list[DagNode] = []
    edges: list[tuple[int, int]] = []
    for i, s in enumerate(steps):
        nodes.append(DagNode(id=i, kind=LEAF, step_type=s))

    occupied = []  # stages with at least one performed member, in spec order
    performed = set(steps)
    for stage in spec.stages:
        if performed & set(stage.members):
            occupied.append(stage)
    stage_node: dict[str, int] = {}
    next_id = len(steps)
    for stage in occupied:
        stage_node[stage.id] = next_id
        nodes.append(DagNode(id=next_id, kind=INTERMEDIATE, stage=stage.id))
        next_id += 1
    root = next_id
    nodes.append(DagNode(id=root, kind=ROOT))

    for i, s in enumerate(steps):
        stage_id = spec.stage_of(s)
        edges.append((i, stage_node[stage_id]) if stage_id is not None else (i, root))
    for stage in occupied:
        edges.append((stage_node[stage.id], root))

    dag = RubricDag(nodes=tuple(nodes), edges=tuple(edges), topo_order=())
    order = topological_order(dag)
    return RubricDag(nodes=dag.nodes, edges=dag.edges, topo_order=tuple(order))


def validate(dag: RubricDag) -> list[str]:
    """Structural invariant check; returns the list of violations (empty = ok)."""
    violations = []
    roots = [n for n in dag.nodes if n.kind == ROOT]
    if len(roots) != 1:
        violations.append("single root")
    node_ids = {n.id for n in dag.nodes}
    if len(node_ids) != len(dag.nodes):
        violations.append("unique node ids")
    out_deg = {n.id: 0 for n in dag.nodes}
    in_deg = {n.id: 0 for n in dag.nodes}
    for a, b in dag.edges:
        if a not in node_ids or b not in node_ids:
            violations.append("edge endpoints exist")
            return violations
        out_deg[a] += 1
        in_deg[b] += 1
    if len(roots) == 1 and out_deg[roots[0].id] != 0:
        violations.append("root has no outgoing edges")
    for n in dag.nodes:
        if n.kind == LEAF and in_deg[n.id] != 0:
            violations.append("leaves have no incoming edges")
            break
    if _has_cycle(dag):
        violations.append("acyclicity")
    elif len(roots) == 1:
        reaches = _reaches(dag, roots[0].id)
        if reaches != node_ids:
            violations.append("every node reaches the root")
    return violations


def _has_cycle(dag: RubricDag) -> bool:
    try:
        topological_order(dag)
    except ContractError:
        return True
    return False


def _reaches(dag: RubricDag, target: int) -> set[int]:
    rev: dict[int, list[int]] = {n.id: [] for n in dag.nodes}
    for a, b in dag.edges:
        rev[b].append(a)
    seen = {target}
    frontier = [target]
    while frontier:
        nxt = frontier.pop()
        for p in rev[nxt]:
            if p not in seen:
                seen.add(p)
                frontier.append(p)
    return seen


def topological_order(dag: RubricDag) -> list[int]:
    """Kahn's algorithm; ready nodes are taken in ascending node id, so the
    result is deterministic. Raises ContractError on a cycle."""
    in_deg = {n.id: 0 for n in dag.nodes}
    succ: dict[int, list[int]] = {n.id: [] for n in dag.nodes}
    for a, b in dag.edges:
        in_deg[b] += 1
        succ[a].append(b)
    ready = [i for i, d in sorted(in_deg.items()) if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        nxt = heapq.heappop(ready)
        order.append(nxt)
        for b in succ[nxt]:
            in_deg[b] -= 1
            if in_deg[b] == 0:
                heapq.heappush(ready, b)
    if len(order) != len(dag.nodes):
        raise ContractError("graph contains a cycle")
    return order
