import numpy as np
import pytest

from bubbledyn.autograd import Tensor, ConvTranspose2d, Unflatten, evaluating
from bubbledyn.constants import MODEL_MEMBRANE
from bubbledyn.exceptions import ShapeError
from bubbledyn.models import (
    TactileAutoencoder,
    ObjectEncoder,
    MembraneDynamicsNet,
    LatentModel,
    dynamics_forward,
    save_checkpoint,
    load_checkpoint,
    read_checkpoint_manifest,
)
from bubbledyn.poses import MembraneState
from bubbledyn.training import AutoencoderTrainer, TrainConfig


@pytest.fixture(scope="module")
def autoencoder():
    return TactileAutoencoder(seed=0)


@pytest.fixture(scope="module")
def object_encoder():
    return ObjectEncoder(seed=0)


def test_encode_shapes(autoencoder, rng):
    maps = rng.uniform(0.0, 0.01, (2, 25, 20))
    embedding = autoencoder.encode_tactile(maps)
    assert embedding.shape == (15, )
    assert np.all(np.isfinite(embedding))
    batch = autoencoder.encode_tactile(np.stack([maps, maps, maps]))
    assert batch.shape == (3, 15)
    assert autoencoder.decode_tactile(embedding).shape == (2, 25, 20)
    assert autoencoder.decode_tactile(batch).shape == (3, 2, 25, 20)


def test_encode_rejects_wrong_shape(autoencoder):
    with pytest.raises(ShapeError):
        autoencoder.encode_tactile(np.zeros((2, 175, 140)))
    with pytest.raises(ShapeError):
        autoencoder.decode_tactile(np.zeros(14))


def test_encode_is_deterministic(autoencoder, rng):
    maps = rng.uniform(0.0, 0.01, (4, 2, 25, 20))
    np.testing.assert_array_equal(
        autoencoder.encode_tactile(maps), autoencoder.encode_tactile(maps)
    )
    np.testing.assert_allclose(
        autoencoder.encode_tactile(maps[1]),
        autoencoder.encode_tactile(maps)[1],
        rtol=1e-5,
        atol=1e-6,
    )
    assert autoencoder.training


def test_decoder_shape_chain(autoencoder):
    shapes = []
    x = Tensor(np.zeros((1, 15), dtype=np.float32))
    with evaluating(autoencoder):
        for layer in autoencoder.decoder.layers():
            x = layer(x)
            if isinstance(layer, (Unflatten, ConvTranspose2d)):
                shapes.append(x.shape[1:])
    assert shapes == [(32, 13, 8), (16, 17, 12), (2, 25, 20)]


def test_object_embedding_permutation_invariant(object_encoder, rng):
    points = rng.uniform(-0.02, 0.02, (100, 3))
    embedding = object_encoder.encode_object(points)
    assert embedding.shape == (10, )
    shuffled = points[rng.permutation(len(points))]
    np.testing.assert_array_equal(
        object_encoder.encode_object(shuffled), embedding
    )
    duplicated = np.concatenate([points, points[:7]], axis=0)
    np.testing.assert_array_equal(
        object_encoder.encode_object(duplicated), embedding
    )


def test_distinct_tools_get_distinct_embeddings(pivoting_tools):
    cfg = TrainConfig(pretrain_epochs=1, pretrain_clouds=3, batch_size=4)
    encoder, _ = AutoencoderTrainer(cfg).pretrain_object_encoder()
    train, test = pivoting_tools
    embeddings = [
        encoder.encode_object(tool.object_model()) for tool in train + test
    ]
    for first in range(len(embeddings)):
        for second in range(first + 1, len(embeddings)):
            distance = np.linalg.norm(
                embeddings[first] - embeddings[second]
            )
            assert distance >= 1e-3


def test_small_cloud_is_resampled(object_encoder):
    points = np.array([[0.0, 0.01, 0.0], [0.0, -0.01, 0.02]])
    assert np.all(np.isfinite(object_encoder.encode_object(points)))


def test_empty_cloud(object_encoder):
    with pytest.raises(ShapeError):
        object_encoder.encode_object(np.zeros((0, 3)))


def test_freeze_keeps_head_trainable(rng):
    encoder = ObjectEncoder(seed=2)
    encoder.freeze_features()
    trainable = [
        name for name, param in encoder.named_parameters()
        if param.requires_grad
    ]
    assert trainable == ["head.weight", "head.bias"]


def test_dynamics_zero_input_is_finite():
    net = MembraneDynamicsNet(seed=0)
    p_next, w_next, r_next = dynamics_forward(
        net, np.zeros(15), np.zeros(6), np.zeros(6), np.zeros(10),
        np.zeros(4),
    )
    assert p_next.shape == (15, )
    assert w_next.shape == (6, )
    assert r_next.shape == (6, )
    for value in (p_next, w_next, r_next):
        assert np.all(np.isfinite(value))


def test_dynamics_pose_is_action_model_plus_correction(rng):
    net = MembraneDynamicsNet(seed=0)
    net.pose_head.weight.data[:] = 0.0
    r = np.array([0.0, 0.1, 0.2, 0.3, 0.0, 0.0])
    a = np.array([0.02, 0.01, -0.01, 0.05])
    _, _, r_next = dynamics_forward(
        net, rng.normal(size=15), rng.normal(size=6), r, rng.normal(size=10),
        a,
    )
    np.testing.assert_allclose(
        r_next, [0.0, 0.11, 0.19, 0.35, 0.0, 0.0], atol=1e-6
    )


def test_dynamics_dimension_mismatch():
    net = MembraneDynamicsNet(seed=0)
    with pytest.raises(ShapeError):
        dynamics_forward(
            net, np.zeros(14), np.zeros(6), np.zeros(6), np.zeros(10),
            np.zeros(4),
        )


def test_latent_model_step(autoencoder, object_encoder, rng):
    model = LatentModel(
        autoencoder, object_encoder, MembraneDynamicsNet(seed=0)
    )
    membrane = MembraneState(
        rng.uniform(0.0, 0.01, (2, 25, 20)), np.zeros(6), np.zeros(6)
    )
    latent = model.initial(membrane)
    assert latent["p"].shape == (1, 15)
    z_emb = object_encoder.encode_object(rng.normal(size=(64, 3)))
    batch = {key: np.repeat(value, 5, axis=0) for key, value in latent.items()}
    next_latent = model.step(batch, z_emb, rng.normal(size=(5, 4)))
    assert next_latent["p"].shape == (5, 15)
    assert next_latent["r"].shape == (5, 6)
    assert model.maps(next_latent).shape == (5, 2, 25, 20)
    assert model.kind == MODEL_MEMBRANE


def test_checkpoint_roundtrip(tmp_path, rng):
    dirpath = str(tmp_path / "checkpoint")
    source = TactileAutoencoder(seed=0)
    source.train()
    source(rng.normal(size=(4, 2, 25, 20)))
    save_checkpoint(dirpath, {"autoencoder": source}, "autoencoder", {
        "note": "unit"
    })
    target = TactileAutoencoder(seed=5)
    manifest = load_checkpoint(dirpath, {"autoencoder": target})
    assert manifest["kind"] == "autoencoder"
    assert manifest["metadata"] == {"note": "unit"}
    maps = rng.uniform(0.0, 0.01, (2, 25, 20))
    np.testing.assert_array_equal(
        target.encode_tactile(maps), source.encode_tactile(maps)
    )
    with pytest.raises(KeyError):
        load_checkpoint(dirpath, {"net": MembraneDynamicsNet()})


def test_missing_checkpoint(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_checkpoint_manifest(str(tmp_path))
