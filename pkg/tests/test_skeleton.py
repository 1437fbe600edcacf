"""Skeleton topology, virtual bone sets, and path enumeration."""

import itertools

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vbones import (
    JOINT_NAMES,
    PARENTS,
    VIRTUAL_CONFIG_NAMES,
    BoneSet,
    ConfigurationError,
    SkeletonTopology,
    ValidationError,
    bone_lengths_from_joints,
    default_topology,
    enumerate_paths,
    load_skeleton,
    make_virtual_config,
    save_skeleton,
)
from vbones.skeleton import skeleton_from_json, skeleton_to_json

END_JOINT_NAMES = {"head", "left_wrist", "right_wrist", "left_ankle", "right_ankle"}


def bone_graph(bone_set: BoneSet) -> nx.Graph:
    """Independent oracle graph: one undirected edge per bone."""
    g = nx.Graph()
    g.add_nodes_from(range(bone_set.topology.num_joints))
    for head, tail in bone_set.bones:
        g.add_edge(tail, head)
    return g


def path_joints(bone_set: BoneSet, path) -> tuple[int, ...]:
    """Translate a (bone, sign) path into the joint sequence it visits."""
    joints = [bone_set.topology.root_index]
    for bone_idx, sign in path:
        head, tail = bone_set.bones[bone_idx]
        joints.append(head if sign > 0 else tail)
    return tuple(joints)


# --- topology ----------------------------------------------------------------


def test_default_topology_shape():
    topo = default_topology()
    assert topo.num_joints == 17
    assert len(topo.real_bones) == 16
    assert topo.joint_names == JOINT_NAMES
    assert topo.parents == PARENTS
    assert topo.root_index == topo.index("pelvis")


def test_root_has_three_children():
    topo = default_topology()
    kids = {topo.joint_names[c] for c in topo.children(topo.root_index)}
    assert kids == {"left_hip", "right_hip", "spine"}


def test_end_joints_are_the_five_extremities():
    topo = default_topology()
    assert {topo.joint_names[j] for j in topo.end_joints} == END_JOINT_NAMES
    assert len(topo.end_joints) == 5


def test_real_bones_ordered_by_child():
    topo = default_topology()
    for i, (child, parent) in enumerate(topo.real_bones):
        assert child == i + 1
        assert parent == topo.parents[child]


def test_depths():
    topo = default_topology()
    assert topo.depth(topo.root_index) == 0
    assert topo.depth(topo.index("right_wrist")) == 5
    assert topo.depth(topo.index("head")) == 4
    assert topo.depth(topo.index("left_ankle")) == 3


def test_adjacent_is_symmetric():
    topo = default_topology()
    for a, b in itertools.combinations(range(topo.num_joints), 2):
        assert topo.adjacent(a, b) == topo.adjacent(b, a)


def test_topology_rejects_cycle():
    with pytest.raises(ValidationError):
        SkeletonTopology(("a", "b", "c"), (1, 2, 0))


def test_topology_rejects_bad_parent_index():
    with pytest.raises(ValidationError):
        SkeletonTopology(("a", "b"), (-1, 5))


def test_topology_rejects_duplicate_names():
    with pytest.raises(ValidationError):
        SkeletonTopology(("a", "a", "b"), (-1, 0, 0))


# --- virtual bone configs ----------------------------------------------------


@pytest.mark.parametrize(
    "name,count", [("VB0", 0), ("VB5", 5), ("VB10", 10), ("VB13", 13), ("VB23", 23)]
)
def test_config_cardinalities(name, count):
    config = make_virtual_config(name)
    assert config.count == count
    assert len(set(config.pairs)) == count


def test_vb5_is_root_to_ends():
    topo = default_topology()
    pairs = make_virtual_config("VB5", topo).pairs
    assert set(pairs) == {(0, j) for j in topo.end_joints}


def test_vb10_is_end_joint_pairs():
    topo = default_topology()
    pairs = make_virtual_config("VB10", topo).pairs
    expected = {
        tuple(sorted(p)) for p in itertools.combinations(topo.end_joints, 2)
    }
    assert set(pairs) == expected


def test_vb13_is_root_to_all_non_adjacent():
    topo = default_topology()
    pairs = make_virtual_config("VB13", topo).pairs
    expected = {
        (0, j)
        for j in range(1, topo.num_joints)
        if not topo.adjacent(0, j)
    }
    assert set(pairs) == expected


def test_vb23_is_union_of_vb10_and_vb13():
    topo = default_topology()
    vb23 = set(make_virtual_config("VB23", topo).pairs)
    vb10 = set(make_virtual_config("VB10", topo).pairs)
    vb13 = set(make_virtual_config("VB13", topo).pairs)
    assert vb23 == vb10 | vb13
    assert not (vb10 & vb13)


def test_virtual_pairs_are_never_real_bones():
    topo = default_topology()
    for name in VIRTUAL_CONFIG_NAMES:
        for a, b in make_virtual_config(name, topo).pairs:
            assert not topo.adjacent(a, b), (name, a, b)
            assert a < b


def test_unknown_config_name():
    with pytest.raises(ConfigurationError):
        make_virtual_config("VB7")


def test_bone_set_layout():
    topo = default_topology()
    bs = BoneSet(topo, make_virtual_config("VB5", topo))
    assert bs.num_real == 16
    assert bs.size == 21
    assert bs.bones[:16] == topo.real_bones[:0] + tuple(
        (child, parent) for child, parent in topo.real_bones
    )
    # virtual pair (a, b) with a < b is stored head=b, tail=a
    for (a, b), bone in zip(make_virtual_config("VB5", topo).pairs, bs.bones[16:]):
        assert bone == (b, a)


# --- path enumeration --------------------------------------------------------


def test_tree_paths_are_unique_for_every_joint():
    topo = default_topology()
    bs = BoneSet(topo, make_virtual_config("VB0", topo))
    for joint in range(topo.num_joints):
        ps = enumerate_paths(bs, joint, 16)
        assert ps.count == 1
        assert len(ps.paths[0]) == topo.depth(joint)
        assert path_joints(bs, ps.paths[0])[-1] == joint or joint == 0


def test_real_chain_to_right_wrist():
    topo = default_topology()
    bs = BoneSet(topo, make_virtual_config("VB0", topo))
    ps = enumerate_paths(bs, topo.index("right_wrist"), 16)
    names = [topo.joint_names[j] for j in path_joints(bs, ps.paths[0])]
    assert names == ["pelvis", "spine", "thorax", "right_shoulder",
                     "right_elbow", "right_wrist"]
    assert all(sign == 1 for _b, sign in ps.paths[0])


def test_root_target_gives_single_empty_path():
    topo = default_topology()
    bs = BoneSet(topo, make_virtual_config("VB23", topo))
    ps = enumerate_paths(bs, topo.root_index, 4)
    assert ps.paths == (tuple(),)


def test_vb5_right_wrist_counts_match_exhaustive_search():
    """Cap 5 admits the real chain and the direct virtual bone; cap 6 also
    admits the detour over the root-to-head virtual bone walked back down
    the neck.  Both counts checked against an independent oracle."""
    topo = default_topology()
    bs = BoneSet(topo, make_virtual_config("VB5", topo))
    target = topo.index("right_wrist")
    g = bone_graph(bs)
    for cap, expected in ((5, 2), (6, 3)):
        oracle = {tuple(p) for p in nx.all_simple_paths(g, 0, target, cutoff=cap)}
        assert len(oracle) == expected
        ps = enumerate_paths(bs, target, cap)
        assert {path_joints(bs, p) for p in ps.paths} == oracle


@pytest.mark.parametrize("name", VIRTUAL_CONFIG_NAMES)
def test_paths_match_oracle_for_sampled_joints(name):
    topo = default_topology()
    bs = BoneSet(topo, make_virtual_config(name, topo))
    g = bone_graph(bs)
    for joint_name in ("head", "right_wrist", "left_ankle", "spine"):
        target = topo.index(joint_name)
        cap = max(6, topo.depth(target))
        ps = enumerate_paths(bs, target, cap)
        oracle = {tuple(p) for p in nx.all_simple_paths(g, 0, target, cutoff=cap)}
        got = {path_joints(bs, p) for p in ps.paths}
        assert got == oracle, (name, joint_name)
        assert ps.count == len(oracle)


def test_paths_are_lexicographic_and_deterministic():
    topo = default_topology()
    bs = BoneSet(topo, make_virtual_config("VB23", topo))
    target = topo.index("head")
    a = enumerate_paths(bs, target, 8)
    b = enumerate_paths(bs, target, 8)
    assert a == b
    keys = [tuple(idx for idx, _s in p) for p in a.paths]
    assert keys == sorted(keys)


def test_every_path_is_simple_and_consistent():
    topo = default_topology()
    bs = BoneSet(topo, make_virtual_config("VB23", topo))
    target = topo.index("left_wrist")
    for path in enumerate_paths(bs, target, 7).paths:
        joints = path_joints(bs, path)
        assert len(set(joints)) == len(joints)
        assert joints[-1] == target
        # consecutive steps share the joint they hand over
        at = topo.root_index
        for bone_idx, sign in path:
            head, tail = bs.bones[bone_idx]
            assert at == (tail if sign > 0 else head)
            at = head if sign > 0 else tail


def test_cap_below_tree_depth_is_rejected():
    topo = default_topology()
    bs = BoneSet(topo, make_virtual_config("VB0", topo))
    with pytest.raises(ValidationError):
        enumerate_paths(bs, topo.index("right_wrist"), 4)


def test_target_out_of_range():
    bs = BoneSet(default_topology(), make_virtual_config("VB0"))
    with pytest.raises(ValidationError):
        enumerate_paths(bs, 17, 8)


# --- bone lengths ------------------------------------------------------------


def test_bone_lengths_against_pairwise_oracle():
    rng = np.random.default_rng(0)
    topo = default_topology()
    bs = BoneSet(topo, make_virtual_config("VB23", topo))
    joints = rng.normal(scale=300.0, size=(4, 17, 3))
    lengths = bone_lengths_from_joints(joints, bs)
    assert lengths.shape == (4, bs.size)
    for f in range(4):
        for i, (head, tail) in enumerate(bs.bones):
            expected = np.sqrt(((joints[f, head] - joints[f, tail]) ** 2).sum())
            assert lengths[f, i] == pytest.approx(expected, rel=1e-12)


def test_bone_lengths_all_zero_at_origin():
    bs = BoneSet(default_topology(), make_virtual_config("VB5"))
    lengths = bone_lengths_from_joints(np.zeros((17, 3)), bs)
    assert np.all(lengths == 0.0)


@settings(max_examples=25, deadline=None)
@given(scale=st.floats(0.01, 100.0), seed=st.integers(0, 2**16))
def test_bone_lengths_scale_linearly(scale, seed):
    bs = BoneSet(default_topology(), make_virtual_config("VB10"))
    joints = np.random.default_rng(seed).normal(size=(17, 3))
    base = bone_lengths_from_joints(joints, bs)
    scaled = bone_lengths_from_joints(joints * scale, bs)
    np.testing.assert_allclose(scaled, base * scale, rtol=1e-9, atol=1e-12)


def test_bone_lengths_reject_nan():
    bs = BoneSet(default_topology(), make_virtual_config("VB0"))
    joints = np.zeros((17, 3))
    joints[3, 1] = np.nan
    with pytest.raises(ValidationError):
        bone_lengths_from_joints(joints, bs)


# --- serialization -----------------------------------------------------------


def test_skeleton_json_round_trip(tmp_path):
    topo = default_topology()
    virtual = make_virtual_config("VB23", topo)
    path = tmp_path / "skeleton.json"
    save_skeleton(path, topo, virtual)
    loaded_topo, loaded_virtual = load_skeleton(path)
    assert loaded_topo == topo
    assert loaded_virtual.pairs == virtual.pairs
    assert loaded_virtual.name == "VB23"


def test_skeleton_json_is_byte_stable():
    topo = default_topology()
    virtual = make_virtual_config("VB13", topo)
    text = skeleton_to_json(topo, virtual)
    again = skeleton_to_json(*skeleton_from_json(text))
    assert again == text


def test_skeleton_json_missing_key():
    with pytest.raises(ValidationError):
        skeleton_from_json('{"joints": ["a"]}')


def test_skeleton_json_rejects_adjacent_virtual_pair():
    topo = default_topology()
    text = skeleton_to_json(topo).replace(
        '"virtual_bones": []', '"virtual_bones": [["pelvis", "spine"]]'
    )
    with pytest.raises(ConfigurationError):
        skeleton_from_json(text)
