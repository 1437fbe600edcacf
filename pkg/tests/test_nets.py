"""Network modules: shapes, invariants, initialization, checkpoints."""

import numpy as np
import pytest
import torch

from vbones import (
    BoneSet,
    ConfigurationError,
    IncompatibleCheckpointError,
    ModelConfig,
    ValidationError,
    bone_directions_from_joints,
    bone_lengths_from_joints,
    default_topology,
    init_params,
    load_checkpoint,
    make_virtual_config,
    save_checkpoint,
)
from vbones.data import SyntheticMotionSpec, generate_synthetic
from vbones.nets import DirectionNet, JointComposer, LengthNet, LiftingModel

TOPO = default_topology()


def small_config(**overrides):
    base = dict(
        virtual_config="VB23",
        receptive_field=9,
        hidden_width=32,
        num_random_frames=3,
        num_residual_blocks=2,
    )
    base.update(overrides)
    return ModelConfig(**base)


def norm2d_like(rng, *shape):
    """Plausible camera-normalized 2D input, O(1) around zero."""
    return torch.tensor(rng.normal(scale=0.2, size=(*shape, 17, 2)))


# --- config validation ---------------------------------------------------------


def test_config_rejects_bad_receptive_field():
    for rf in (10, 4, 2, 18):
        with pytest.raises(ConfigurationError):
            small_config(receptive_field=rf)


def test_config_accepts_powers_of_three():
    for rf in (3, 9, 27, 243):
        assert small_config(receptive_field=rf).receptive_field == rf


def test_config_rejects_unknown_virtual_set():
    with pytest.raises(ConfigurationError):
        small_config(virtual_config="VB99")


def test_config_rejects_bad_dtype_and_width():
    with pytest.raises(ConfigurationError):
        small_config(dtype="float16")
    with pytest.raises(ConfigurationError):
        small_config(hidden_width=4)
    with pytest.raises(ConfigurationError):
        small_config(num_random_frames=0)


# --- length net ------------------------------------------------------------------


def test_length_net_output_shapes():
    torch.manual_seed(0)
    config = small_config()
    net = LengthNet(config, BoneSet(TOPO, make_virtual_config("VB23"))).double()
    rng = np.random.default_rng(0)
    out = net(norm2d_like(rng, 4, 3), norm2d_like(rng, 4))
    assert out.coarse3d_per_frame.shape == (4, 3, 17, 3)
    assert out.coarse3d_current.shape == (4, 17, 3)
    assert out.per_frame_real_lengths.shape == (4, 3, 16)
    assert out.attention_weights.shape == (4, 3, 16)
    assert out.real_lengths.shape == (4, 16)
    assert out.virtual_lengths.shape == (4, 23)


def test_attention_weights_form_a_simplex_over_frames():
    torch.manual_seed(1)
    net = LengthNet(small_config(), BoneSet(TOPO, make_virtual_config("VB23"))).double()
    rng = np.random.default_rng(1)
    out = net(norm2d_like(rng, 5, 3), norm2d_like(rng, 5))
    w = out.attention_weights
    assert bool((w >= 0).all())
    np.testing.assert_allclose(w.sum(dim=1).detach(), 1.0, atol=1e-12)


def test_single_random_frame_gets_weight_one():
    torch.manual_seed(2)
    config = small_config(num_random_frames=1)
    net = LengthNet(config, BoneSet(TOPO, make_virtual_config("VB5"))).double()
    rng = np.random.default_rng(2)
    out = net(norm2d_like(rng, 3, 1), norm2d_like(rng, 3))
    assert bool((out.attention_weights == 1.0).all())
    np.testing.assert_allclose(
        out.real_lengths.detach(), out.per_frame_real_lengths[:, 0].detach(), atol=0
    )


def test_pooled_lengths_are_convex_combinations():
    torch.manual_seed(3)
    net = LengthNet(small_config(), BoneSet(TOPO, make_virtual_config("VB0"))).double()
    rng = np.random.default_rng(3)
    out = net(norm2d_like(rng, 2, 3), norm2d_like(rng, 2))
    per_frame = out.per_frame_real_lengths.detach()
    pooled = out.real_lengths.detach()
    assert bool((pooled <= per_frame.max(dim=1).values + 1e-12).all())
    assert bool((pooled >= per_frame.min(dim=1).values - 1e-12).all())


def test_coarse3d_root_row_is_zero():
    torch.manual_seed(4)
    net = LengthNet(small_config(), BoneSet(TOPO, make_virtual_config("VB0"))).double()
    rng = np.random.default_rng(4)
    coarse = net.coarse3d(norm2d_like(rng, 6))
    assert coarse.shape == (6, 17, 3)
    assert bool((coarse[:, TOPO.root_index] == 0).all())


def test_length_net_rejects_wrong_random_frame_count():
    torch.manual_seed(5)
    net = LengthNet(small_config(num_random_frames=3), BoneSet(TOPO, make_virtual_config("VB0"))).double()
    rng = np.random.default_rng(5)
    with pytest.raises(ConfigurationError):
        net(norm2d_like(rng, 2, 4), norm2d_like(rng, 2))


def test_length_net_unbatched_inputs():
    torch.manual_seed(6)
    net = LengthNet(small_config(), BoneSet(TOPO, make_virtual_config("VB10"))).double()
    rng = np.random.default_rng(6)
    out = net(norm2d_like(rng, 3), norm2d_like(rng))
    assert out.real_lengths.shape == (16,)
    assert out.virtual_lengths.shape == (10,)


# --- direction net ----------------------------------------------------------------


def test_direction_net_outputs_unit_vectors():
    torch.manual_seed(7)
    net = DirectionNet(small_config(), BoneSet(TOPO, make_virtual_config("VB23"))).double()
    rng = np.random.default_rng(7)
    dirs = net(norm2d_like(rng, 4, 9))
    assert dirs.shape == (4, 39, 3)
    np.testing.assert_allclose(dirs.norm(dim=-1).detach(), 1.0, atol=1e-12)


def test_direction_net_window_length_must_match():
    torch.manual_seed(8)
    net = DirectionNet(small_config(), BoneSet(TOPO, make_virtual_config("VB0"))).double()
    rng = np.random.default_rng(8)
    with pytest.raises(ValidationError):
        net(norm2d_like(rng, 2, 7))


def test_direction_net_receptive_field_27():
    torch.manual_seed(9)
    net = DirectionNet(small_config(receptive_field=27), BoneSet(TOPO, make_virtual_config("VB5"))).double()
    rng = np.random.default_rng(9)
    dirs = net(norm2d_like(rng, 2, 27))
    assert dirs.shape == (2, 21, 3)


# --- joint composer ----------------------------------------------------------------


def gt_inputs(name, seed, frames=3):
    """GT lengths/directions split into the composer's three arguments."""
    bs = BoneSet(TOPO, make_virtual_config(name, TOPO))
    rng = np.random.default_rng(seed)
    joints = rng.normal(scale=260.0, size=(frames, 17, 3))
    joints -= joints[:, :1]
    t = torch.tensor(joints)
    dirs = bone_directions_from_joints(t, bs)
    lengths = bone_lengths_from_joints(t, bs)
    return bs, t, lengths[:, : bs.num_real], lengths[:, bs.num_real :], dirs


@pytest.mark.parametrize("name", ["VB0", "VB5", "VB10", "VB13", "VB23"])
def test_composer_is_exact_tree_composition_at_init(name):
    torch.manual_seed(10)
    bs, joints, real, virtual, dirs = gt_inputs(name, seed=10)
    composer = JointComposer(small_config(virtual_config=name), bs).double()
    with torch.no_grad():
        out = composer(real, virtual, dirs)
    np.testing.assert_allclose(out.numpy(), joints.numpy(), atol=1e-9)


def test_composer_root_is_pinned_to_zero_even_after_updates():
    torch.manual_seed(11)
    bs, _joints, real, virtual, dirs = gt_inputs("VB23", seed=11)
    composer = JointComposer(small_config(), bs).double()
    with torch.no_grad():
        for p in composer.parameters():
            p.add_(torch.randn_like(p) * 0.1)
        out = composer(real, virtual, dirs)
    assert bool((out[:, TOPO.root_index] == 0).all())


def test_composer_rejects_wrong_length_counts():
    torch.manual_seed(12)
    bs, _joints, real, virtual, dirs = gt_inputs("VB5", seed=12)
    composer = JointComposer(small_config(virtual_config="VB5"), bs).double()
    with pytest.raises(ConfigurationError):
        composer(real[:, :-1], virtual, dirs)
    with pytest.raises(ConfigurationError):
        composer(real, virtual[:, :-1], dirs)


def test_composer_rejects_non_unit_directions():
    torch.manual_seed(13)
    bs, _joints, real, virtual, dirs = gt_inputs("VB0", seed=13)
    composer = JointComposer(small_config(virtual_config="VB0"), bs).double()
    with pytest.raises(ValidationError):
        composer(real, virtual, dirs * 1.01)


# --- full model -------------------------------------------------------------------


def model_inputs(config, rng, batch=2):
    x_random = torch.tensor(
        rng.normal(scale=0.2, size=(batch, config.num_random_frames, 17, 2))
    )
    x_current = torch.tensor(rng.normal(scale=0.2, size=(batch, 17, 2)))
    x_window = torch.tensor(
        rng.normal(scale=0.2, size=(batch, config.receptive_field, 17, 2))
    )
    return x_random, x_current, x_window


def test_model_forward_shapes_all_configs():
    for name, virtual_count in (("VB0", 0), ("VB13", 13)):
        config = small_config(virtual_config=name)
        model = init_params(config, seed=14)
        rng = np.random.default_rng(14)
        out, dirs, joints = model(*model_inputs(config, rng))
        assert out.real_lengths.shape == (2, 16)
        assert out.virtual_lengths.shape == (2, virtual_count)
        assert dirs.shape == (2, 16 + virtual_count, 3)
        assert joints.shape == (2, 17, 3)
        assert bool((joints[:, 0] == 0).all())


def test_model_dtype_follows_config():
    model = init_params(small_config(dtype="float32"), seed=15)
    assert next(model.parameters()).dtype == torch.float32
    model = init_params(small_config(), seed=15)
    assert next(model.parameters()).dtype == torch.float64


def test_init_params_is_seed_deterministic():
    a = init_params(small_config(), seed=16)
    b = init_params(small_config(), seed=16)
    c = init_params(small_config(), seed=17)
    a_state, b_state, c_state = a.state_dict(), b.state_dict(), c.state_dict()
    assert a_state.keys() == b_state.keys()
    for key in a_state:
        np.testing.assert_array_equal(a_state[key].numpy(), b_state[key].numpy())
    assert any(
        not np.array_equal(a_state[k].numpy(), c_state[k].numpy()) for k in a_state
    )


# --- checkpoints ------------------------------------------------------------------


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    config = small_config(virtual_config="VB10")
    model = init_params(config, seed=18)
    path = tmp_path / "model.npz"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert loaded.config == config
    assert loaded.bone_set.virtual.name == "VB10"
    for key, value in model.state_dict().items():
        np.testing.assert_array_equal(
            value.numpy(), loaded.state_dict()[key].numpy()
        )
    rng = np.random.default_rng(18)
    inputs = model_inputs(config, rng)
    with torch.no_grad():
        _o1, _d1, j1 = model(*inputs)
        _o2, _d2, j2 = loaded(*inputs)
    np.testing.assert_array_equal(j1.numpy(), j2.numpy())


def test_checkpoint_rejects_mismatched_config(tmp_path):
    model = init_params(small_config(), seed=19)
    path = tmp_path / "model.npz"
    save_checkpoint(model, path)
    with pytest.raises(IncompatibleCheckpointError) as err:
        load_checkpoint(path, expected_config=small_config(hidden_width=64))
    assert "hidden_width" in str(err.value)


def test_checkpoint_accepts_matching_expected_config(tmp_path):
    config = small_config()
    model = init_params(config, seed=20)
    path = tmp_path / "model.npz"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path, expected_config=config)
    assert loaded.config == config


def test_checkpoint_rejects_non_checkpoint_file(tmp_path):
    path = tmp_path / "junk.npz"
    np.savez(path, stuff=np.zeros(3))
    with pytest.raises(IncompatibleCheckpointError):
        load_checkpoint(path)


# --- end to end sanity ---------------------------------------------------------------


def test_model_runs_on_synthetic_observations():
    """The assembled model consumes real generator output without shape
    or dtype friction."""
    config = small_config(num_random_frames=2)
    model = init_params(config, seed=21)
    clip = generate_synthetic(SyntheticMotionSpec(num_frames=16, seed=21))
    norm = (clip.joints2d - [[clip.camera.u0, clip.camera.v0]]) / clip.camera.fx
    x_window = torch.tensor(norm[:9][None])
    x_current = x_window[:, 4]
    x_random = torch.tensor(norm[[0, 8]][None])
    out, dirs, joints = model(x_random, x_current, x_window)
    assert joints.shape == (1, 17, 3)
    assert bool(torch.isfinite(joints).all())
