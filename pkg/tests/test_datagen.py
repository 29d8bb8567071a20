import numpy as np
import pytest

from adloco.datagen import Dataset, dump_csv, generate, load_csv, next_batch, shard
from adloco.errors import ConfigError


@pytest.mark.parametrize("recipe", ["gaussian-quadratic", "two-cluster", "teacher-mlp"])
def test_generation_is_deterministic(recipe):
    a = generate(recipe, 50, 3, seed=4)
    b = generate(recipe, 50, 3, seed=4)
    c = generate(recipe, 50, 3, seed=5)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.targets, b.targets)
    assert not np.array_equal(a.features, c.features)
    assert a.features.shape == (50, 3) and a.targets.shape == (50,)


def test_dataset_is_read_only():
    ds = generate("two-cluster", 10, 2, 0)
    with pytest.raises(ValueError):
        ds.features[0, 0] = 1.0


def test_two_cluster_labels_are_binary():
    ds = generate("two-cluster", 200, 2, 0)
    assert set(np.unique(ds.targets)) == {0.0, 1.0}


def test_shard_sizes_and_membership():
    ds = generate("gaussian-quadratic", 100, 2, 0)
    shards = shard(ds, 4, 0.25, seed=1)
    assert [len(s.indices) for s in shards] == [25] * 4
    for s in shards:
        assert len(set(s.indices.tolist())) == 25
        assert set(s.indices.tolist()) <= set(range(100))
    assert shard(ds, 3, 0.1, 1)[0].indices.size == 10


def test_shards_are_independent_of_k():
    ds = generate("gaussian-quadratic", 100, 2, 0)
    a = shard(ds, 2, 0.3, 9)
    b = shard(ds, 5, 0.3, 9)
    np.testing.assert_array_equal(a[1].indices, b[1].indices)


def test_cursor_state_restores_the_stream():
    ds = generate("two-cluster", 64, 2, 0)
    sh = shard(ds, 1, 0.5, 3)[0]
    next_batch(sh, ds, 4)
    saved = sh.get_state()
    first = next_batch(sh, ds, 8)
    sh.set_state(saved)
    again = next_batch(sh, ds, 8)
    np.testing.assert_array_equal(first.features, again.features)


def test_draws_stay_inside_the_shard():
    ds = generate("two-cluster", 64, 2, 0)
    sh = shard(ds, 2, 0.25, 3)[1]
    assert set(sh.draw((10, 7)).ravel().tolist()) <= set(sh.indices.tolist())


def test_csv_round_trip(tmp_path):
    ds = generate("teacher-mlp", 20, 3, 2)
    path = tmp_path / "data.csv"
    dump_csv(ds, path)
    back = load_csv(path)
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.targets, ds.targets)
    assert path.read_text().splitlines()[0] == "x0,x1,x2,target"


def test_bad_inputs(tmp_path):
    with pytest.raises(ConfigError):
        generate("spiral", 10, 2, 0)
    with pytest.raises(ConfigError):
        load_csv(tmp_path / "missing.csv")
    with pytest.raises(ConfigError):
        shard(generate("two-cluster", 10, 2, 0), 2, 0.0, 0)
    with pytest.raises(ConfigError):
        Dataset(np.zeros((3, 2)), np.zeros(2), "x", 0)
