import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from raqa.errors import ConfigError, ContractError
from raqa.rubric import (INTERMEDIATE, LEAF, ROOT, RubricDag, DagNode, RubricSpec,
                         Stage, StepType, build_dag, load_rubric_spec,
                         rubric_from_dict, rubric_to_dict, save_rubric_spec,
                         topological_order, validate)


def test_build_three_steps_two_stages(small_rubric):
    dag = build_dag(small_rubric, [0, 1, 2])  # stages a={0,1}, b={2} occupied
    kinds = [n.kind for n in dag.nodes]
    assert kinds.count(LEAF) == 3
    assert kinds.count(INTERMEDIATE) == 2
    assert kinds.count(ROOT) == 1
    assert len(dag.nodes) == 6
    assert len(dag.edges) == 5
    assert validate(dag) == []


def test_build_single_step_no_stage():
    spec = RubricSpec(step_types=(StepType(0, "only"),), stages=())
    dag = build_dag(spec, [0])
    assert len(dag.nodes) == 2
    assert dag.edges == ((0, 1),)
    assert validate(dag) == []


def test_repeated_step_type_gives_two_leaves(small_rubric):
    dag = build_dag(small_rubric, [0, 0])
    leaves = [n for n in dag.nodes if n.kind == LEAF]
    assert len(leaves) == 2
    assert leaves[0].step_type == leaves[1].step_type == 0
    assert leaves[0].id != leaves[1].id
    assert validate(dag) == []


def test_unknown_step_and_empty_steps_rejected(small_rubric):
    with pytest.raises(ConfigError):
        build_dag(small_rubric, [99])
    with pytest.raises(ConfigError):
        build_dag(small_rubric, [])


def test_validate_reports_cycle(small_rubric):
    dag = build_dag(small_rubric, [0, 2])
    bad = RubricDag(nodes=dag.nodes, edges=dag.edges + ((dag.root_id(), 0),),
                    topo_order=dag.topo_order)
    assert "acyclicity" in validate(bad)


def test_validate_reports_two_roots():
    nodes = (DagNode(0, LEAF, step_type=0), DagNode(1, ROOT), DagNode(2, ROOT))
    bad = RubricDag(nodes=nodes, edges=((0, 1),), topo_order=())
    assert "single root" in validate(bad)


def test_validate_reports_unreachable_node(small_rubric):
    dag = build_dag(small_rubric, [0, 2])
    orphan = DagNode(99, LEAF, step_type=1)
    bad = RubricDag(nodes=dag.nodes + (orphan,), edges=dag.edges, topo_order=())
    assert "every node reaches the root" in validate(bad)


def test_topological_order_chain_and_diamond(small_rubric):
    spec = RubricSpec(step_types=(StepType(0, "a"),), stages=((Stage("s", (0,))),))
    chain = build_dag(spec, [0])
    assert topological_order(chain) == [0, 1, 2]

    diamond = build_dag(small_rubric, [0, 1])  # two leaves -> one stage -> root
    order = topological_order(diamond)
    assert order.index(0) < order.index(2) and order.index(1) < order.index(2)
    assert order[-1] == diamond.root_id()


def test_topological_order_deterministic_ascending_ids(small_rubric):
    dag = build_dag(small_rubric, [0, 1, 2, 4])
    assert topological_order(dag) == sorted(n.id for n in dag.nodes)
    cyc = RubricDag(nodes=dag.nodes, edges=dag.edges + ((dag.root_id(), 0),),
                    topo_order=())
    with pytest.raises(ContractError):
        topological_order(cyc)


def test_unstaged_steps_connect_to_root():
    spec = RubricSpec(step_types=(StepType(0, "a"), StepType(1, "b")),
                      stages=(Stage("s", (0,)),))
    dag = build_dag(spec, [0, 1])
    root = dag.root_id()
    assert (1, root) in dag.edges  # step type 1 has no stage
    assert len([n for n in dag.nodes if n.kind == INTERMEDIATE]) == 1


@settings(max_examples=50, deadline=None)
@given(hst.lists(hst.integers(0, 5), min_size=1, max_size=8),
       hst.integers(0, 3))
def test_build_dag_invariants(steps, n_stages):
    types = tuple(StepType(i, f"t{i}") for i in range(6))
    groups = [(0, 1), (2, 3), (4, 5)][:n_stages]
    spec = RubricSpec(step_types=types,
                      stages=tuple(Stage(f"s{i}", g) for i, g in enumerate(groups)))
    dag = build_dag(spec, steps)
    assert validate(dag) == []
    staged = {m for g in groups for m in g}
    occupied = {spec.stage_of(s) for s in steps if s in staged}
    assert len(dag.nodes) == len(steps) + len(occupied) + 1
    assert len(dag.edges) == len(steps) + len(occupied)
    # leaf order must match step order
    leaves = [n for n in dag.nodes if n.kind == LEAF]
    assert [n.step_type for n in sorted(leaves, key=lambda n: n.id)] == steps


def test_json_round_trip(tmp_path, small_rubric):
    path = tmp_path / "rubric.json"
    save_rubric_spec(small_rubric, path)
    assert load_rubric_spec(path) == small_rubric


def test_unknown_keys_rejected(tmp_path):
    obj = rubric_to_dict(RubricSpec(step_types=(StepType(0, "a"),), stages=()))
    obj["color"] = "blue"
    with pytest.raises(ConfigError):
        rubric_from_dict(obj)
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(obj))
    with pytest.raises(ConfigError):
        load_rubric_spec(path)


def test_spec_validation_errors():
    with pytest.raises(ConfigError):  # duplicate type ids
        rubric_from_dict({"step_types": [{"id": 0, "name": "a"}, {"id": 0, "name": "b"}],
                          "stages": []})
    with pytest.raises(ConfigError):  # empty stage
        rubric_from_dict({"step_types": [{"id": 0, "name": "a"}],
                          "stages": [{"id": "s", "members": []}]})
    with pytest.raises(ConfigError):  # type in two stages
        rubric_from_dict({"step_types": [{"id": 0, "name": "a"}],
                          "stages": [{"id": "s", "members": [0]},
                                     {"id": "t", "members": [0]}]})
    with pytest.raises(ConfigError):  # stage references unknown type
        rubric_from_dict({"step_types": [{"id": 0, "name": "a"}],
                          "stages": [{"id": "s", "members": [7]}]})
