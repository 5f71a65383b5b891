import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zslforge import ndcore as nd
from zslforge.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from zslforge.data import SyntheticSpec, make_synthetic
from zslforge.models import (
    MLP,
    ConditioningMismatchError,
    MLPSpec,
    ModelSet,
    critic_score,
    decode_attributes,
    generate,
    init_models,
)
from zslforge.ndcore import AdamState, Tape, adam_step


def zeroed(net):
    out = net.copy()
    for v in out.params.values():
        v[...] = 0.0
    return out


def test_unseen_critic_width_by_stage():
    assert init_models(8, 3, 16, 1, nd.make_rng(0)).D_u.spec.input_dim == 8
    assert init_models(8, 3, 16, 2, nd.make_rng(0)).D_u.spec.input_dim == 11


def test_shapes_and_noise_dim():
    m = init_models(8, 3, 16, 1, nd.make_rng(0))
    assert m.noise_dim == 3
    assert m.G.params["W1"].shape == (6, 16) and m.G.params["W2"].shape == (16, 8)
    assert m.Dec.spec.output_dim == 3
    assert m.D_s.spec.input_dim == 11
    for net in m.nets().values():
        assert not net.params["b1"].any() and not net.params["b2"].any()
        bound = 1 / np.sqrt(net.spec.input_dim)
        assert np.abs(net.params["W1"]).max() <= bound


def test_init_is_deterministic():
    a = init_models(8, 3, 16, 2, nd.make_rng(5)).to_arrays()
    b = init_models(8, 3, 16, 2, nd.make_rng(5)).to_arrays()
    assert all(np.array_equal(a[k], b[k]) for k in a)


@pytest.mark.parametrize("args", [(0, 3, 16, 1), (8, 3, 0, 1), (8, 3, 16, 3)])
def test_init_rejects_bad_arguments(args):
    with pytest.raises(ValueError):
        init_models(*args, nd.make_rng(0))


@settings(max_examples=30, deadline=None)
@given(rows=st.integers(1, 9), seed=st.integers(0, 2**31))
def test_generate_shape_and_range(rows, seed):
    rng = nd.make_rng(seed)
    m = init_models(8, 3, 16, 1, rng)
    z = rng.standard_normal((rows, 3))
    a = rng.random((rows, 3))
    out = generate(m.G, z, a).value
    assert out.shape == (rows, 8)
    assert (out >= 0).all()
    assert np.array_equal(out, generate(m.G, z, a).value)


def test_zero_weights_give_zero_outputs():
    m = init_models(8, 3, 16, 1, nd.make_rng(0))
    rng = nd.make_rng(1)
    z, a, x = rng.standard_normal((4, 3)), rng.random((4, 3)), rng.random((4, 8))
    assert not generate(zeroed(m.G), z, a).value.any()
    assert not decode_attributes(zeroed(m.Dec), x).value.any()


def test_generate_row_mismatch():
    m = init_models(8, 3, 16, 1, nd.make_rng(0))
    with pytest.raises(nd.ShapeError):
        generate(m.G, np.zeros((4, 3)), np.zeros((5, 3)))


def test_decode_shape_and_width_check():
    m = init_models(8, 3, 16, 1, nd.make_rng(0))
    assert decode_attributes(m.Dec, np.ones((5, 8))).shape == (5, 3)
    with pytest.raises(nd.ShapeError):
        decode_attributes(m.Dec, np.ones((5, 7)))


def test_critic_conditioning_contract():
    m1 = init_models(8, 3, 16, 1, nd.make_rng(0))
    m2 = init_models(8, 3, 16, 2, nd.make_rng(0))
    x, a = np.ones((4, 8)), np.ones((4, 3))
    with pytest.raises(ConditioningMismatchError):
        critic_score(m1.D_u, x, a)
    with pytest.raises(ConditioningMismatchError):
        critic_score(m2.D_u, x)
    assert critic_score(m1.D_u, x).shape == (4, 1)
    assert critic_score(m2.D_u, x, a).shape == (4, 1)


def test_constant_critic_scores_equal():
    m = init_models(8, 3, 16, 1, nd.make_rng(0))
    d = zeroed(m.D_u)
    d.params["b2"][...] = 0.7
    s = critic_score(d, nd.make_rng(2).random((6, 8))).value
    assert np.all(s == 0.7)


def test_mlp_spec_validation():
    with pytest.raises(ValueError):
        MLPSpec(0, 4, 1)
    with pytest.raises(ValueError):
        MLPSpec(4, 4, 1, output_activation="tanh")


def test_decoder_fits_noiseless_attributes():
    # regression of attributes from features alone, seen classes only
    ds = make_synthetic(SyntheticSpec(cluster_noise=0.01), seed=0)
    dec = MLP.init(MLPSpec(ds.d, 64, ds.k), nd.make_rng(0))
    x = ds.x_seen_train
    a = ds.attributes.lookup(ds.y_seen_train)
    state = AdamState()
    for _ in range(1500):
        tape = Tape()
        b = dec.bind(tape)
        loss = nd.mean(nd.sum_(nd.abs_(decode_attributes(b, x) - a), axis=1))
        grads = nd.grad(tape, loss, b.leaf_list())
        adam_step(dec.params, dict(zip(b.leaves, (g.value for g in grads))), state, 1e-3)
    pred = decode_attributes(dec, ds.x_seen_test).value
    err = np.abs(pred - ds.attributes.lookup(ds.y_seen_test)).mean()
    assert err < 0.05


# --------------------------------------------------------------------------
# checkpoints


def test_model_checkpoint_round_trip(tmp_path):
    m = init_models(8, 3, 16, 2, nd.make_rng(0))
    path = tmp_path / "m.ckpt"
    m.save(path, {"config_hash": "abc"})
    back, meta = ModelSet.load(path)
    assert meta["config_hash"] == "abc" and back.stage == 2
    x, a = nd.make_rng(1).random((5, 8)), nd.make_rng(2).random((5, 3))
    assert np.array_equal(critic_score(back.D_u, x, a).value, critic_score(m.D_u, x, a).value)
    assert np.array_equal(decode_attributes(back.Dec, x).value, decode_attributes(m.Dec, x).value)


def test_checkpoint_bytes_are_reproducible(tmp_path):
    for name in ("a", "b"):
        init_models(8, 3, 16, 1, nd.make_rng(0)).save(tmp_path / name)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_checkpoint_kind_and_magic(tmp_path):
    save_checkpoint(tmp_path / "c", "cascade", {"w": np.arange(3.0)}, {})
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "c", "models")
    (tmp_path / "junk").write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "junk")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent")


def test_checkpoint_preserves_dtype(tmp_path):
    arrays = {"f32": np.arange(4, dtype=np.float32).reshape(2, 2), "i": np.arange(3)}
    save_checkpoint(tmp_path / "c", "misc", arrays, {"x": 1})
    kind, back, meta = load_checkpoint(tmp_path / "c")
    assert kind == "misc" and meta["x"] == 1
    for k, v in arrays.items():
        assert back[k].dtype == v.dtype and np.array_equal(back[k], v)
