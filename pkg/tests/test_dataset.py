import numpy as np
import pytest

from bubbledyn.dataset import (
    Dataset,
    ObjectModel,
    Transition,
    make_point_cloud,
    merge_datasets,
)
from bubbledyn.exceptions import ShapeError
from bubbledyn.poses import MembraneState


def make_object(name, offset=0.0):
    points = np.arange(12, dtype=np.float64).reshape(4, 3) * 0.001 + offset
    return ObjectModel(
        name, points, np.array([0.0, 0.0, -0.05]),
        np.array([0.01, 0.03, 0.1]),
    )


def make_transition(index, z_id=0):
    value = float(index)
    state = MembraneState(
        np.full((2, 25, 20), value * 0.001),
        np.full(6, value),
        np.full(6, -value),
    )
    following = MembraneState(
        np.full((2, 25, 20), value * 0.002),
        np.full(6, value + 1.0),
        np.full(6, -value - 1.0),
    )
    return Transition(
        state, z_id, np.array([0.025, value, 0.0, 0.0]), following
    )


def make_dataset(count, task="pivoting", names=("plate", )):
    dataset = Dataset(task, [make_object(name) for name in names])
    for index in range(count):
        dataset.add(
            make_transition(index, index % len(names)),
            {"q_true_t": [0.0, 0.0, index], "episode": index // 5},
        )
    return dataset


def test_point_cloud_validation():
    cloud = make_point_cloud(np.zeros((2, 3)), values=[1.0, 2.0])
    assert cloud.frame == "grasp"
    with pytest.raises(ShapeError):
        make_point_cloud(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        make_point_cloud([[0.0, np.nan, 0.0]])


def test_add_and_read_back():
    dataset = make_dataset(3)
    assert len(dataset) == 3
    arrays = dataset.arrays()
    assert arrays["p_t"].shape == (3, 2, 25, 20)
    assert arrays["a_t"].dtype == np.float32
    assert np.isnan(arrays["q_obs_t"]).all()
    np.testing.assert_array_equal(arrays["q_true_t"][:, 2], [0, 1, 2])
    transition = dataset.transition(2)
    assert transition.z_id == 0
    np.testing.assert_allclose(transition.s_next.w, 3.0)


def test_unknown_object_id_rejected():
    dataset = make_dataset(0)
    with pytest.raises(ValueError):
        dataset.add(make_transition(0, z_id=1))


def test_add_object_is_idempotent():
    dataset = make_dataset(0, names=("plate", "wedge"))
    assert dataset.add_object(make_object("wedge")) == 1
    assert dataset.add_object(make_object("spoon")) == 2
    assert dataset.object_index("spoon") == 2
    with pytest.raises(KeyError):
        dataset.object_index("fork")


def test_split_partitions_indices(rng):
    dataset = make_dataset(10)
    train, val = dataset.split(0.2, rng)
    assert len(val) == 2
    assert sorted(np.concatenate([train, val])) == list(range(10))
    with pytest.raises(ValueError):
        dataset.split(1.0, rng)


def test_subset_keeps_objects():
    dataset = make_dataset(6, names=("plate", "wedge"))
    subset = dataset.subset([1, 3])
    assert len(subset) == 2
    assert [obj.name for obj in subset.objects] == ["plate", "wedge"]
    np.testing.assert_array_equal(subset.arrays()["z_id"], [1, 1])


def test_save_load_roundtrip(tmp_path, monkeypatch):
    monkeypatch.setattr("bubbledyn.dataset.SHARD_SIZE", 4)
    dataset = make_dataset(9, names=("plate", "wedge"))
    dirpath = str(tmp_path / "data")
    dataset.save(dirpath, {"seed": 3})
    loaded = Dataset.load(dirpath)
    assert loaded.task == "pivoting"
    assert len(loaded) == 9
    for key, values in dataset.arrays().items():
        np.testing.assert_array_equal(loaded.arrays()[key], values)
    assert loaded.objects[1].name == "wedge"
    np.testing.assert_allclose(
        loaded.objects[0].points, dataset.objects[0].points, rtol=1e-6
    )


def test_load_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        Dataset.load(str(tmp_path))


def test_merge_remaps_object_ids():
    first = make_dataset(2, "drawing", names=("marker", ))
    second = make_dataset(2, "pivoting", names=("plate", "marker"))
    merged = merge_datasets([first, second])
    assert merged.task == "drawing+pivoting"
    assert [obj.name for obj in merged.objects] == ["marker", "plate"]
    np.testing.assert_array_equal(merged.arrays()["z_id"], [0, 0, 1, 0])
    with pytest.raises(ValueError):
        merge_datasets([])
