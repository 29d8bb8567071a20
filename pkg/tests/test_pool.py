import numpy as np
import pytest

from adloco.datagen import generate, shard, stream
from adloco.errors import UsageError
from adloco.optim import InnerOptimizerState, OuterOptimizerState
from adloco.pool import PoolState, TrainerState, check_merge, do_merge, plan_batch


def make_pool(params, requested):
    ds = generate("gaussian-quadratic", 16, len(params[0]), 0)
    shards = shard(ds, len(params), 0.5, 0)
    trainers = [
        TrainerState(i, np.asarray(x, dtype=float), b, shards[i], InnerOptimizerState(), OuterOptimizerState())
        for i, (x, b) in enumerate(zip(params, requested))
    ]
    return PoolState(trainers)


def test_check_merge_examples():
    req = {1: 5, 2: 2, 3: 9, 4: 2}
    assert check_merge(req, 2) == {2, 4}
    assert check_merge(req, 0) == set()
    assert check_merge(req, 5) == set()
    assert check_merge({7: 3}, 1) == set()
    assert check_merge({3: 4, 1: 4, 2: 4}, 1) == {1}


def test_do_merge_examples():
    pool = make_pool([[0.0, 0.0], [3.0, 3.0]], [1, 2])
    do_merge(pool, {0, 1})
    (rep,) = pool.alive()
    assert rep.id == 1
    np.testing.assert_array_equal(rep.params, [2.0, 2.0])

    same = make_pool([[1.5, -2.0]] * 3, [4, 1, 9])
    do_merge(same, {0, 1, 2})
    np.testing.assert_allclose(same.alive()[0].params, [1.5, -2.0], atol=1e-15)
    assert len(same.alive()) == 1


def test_tie_goes_to_smaller_id():
    pool = make_pool([[0.0], [1.0], [2.0]], [5, 5, 3])
    do_merge(pool, {0, 1, 2})
    assert pool.alive()[0].id == 0


def test_random_merges_preserve_weighted_sum():
    rng = stream(303)
    for _ in range(50):
        k = int(rng.integers(2, 8))
        params = rng.standard_normal((k, 5))
        req = rng.integers(1, 6, size=k).tolist()
        pool = make_pool(params, req)
        members = sorted(rng.choice(k, size=int(rng.integers(2, k + 1)), replace=False).tolist())
        before = sum(req[i] * params[i] for i in members)
        top = max(req[i] for i in members)
        expected_rep = min(i for i in members if req[i] == top)
        do_merge(pool, set(members))
        rep = pool.by_id(expected_rep)
        assert rep.alive and rep.requested_batch == top
        assert np.max(np.abs(before - sum(req[i] for i in members) * rep.params)) <= 1e-12
        assert len(pool.alive()) == k - len(members) + 1
        for i in set(range(k)) - set(members):
            np.testing.assert_array_equal(pool.by_id(i).params, params[i])


def test_merge_misuse():
    pool = make_pool([[0.0], [1.0], [2.0]], [1, 2, 3])
    with pytest.raises(UsageError):
        do_merge(pool, {1})
    with pytest.raises(UsageError):
        do_merge(pool, {1, 9})
    do_merge(pool, {0, 1})
    with pytest.raises(UsageError):
        do_merge(pool, {0, 2})


@pytest.mark.parametrize(
    "requested, expected",
    [(5, (False, 1, 4)), (9, (True, 3, 4)), (8, (False, 1, 4)), (3, (False, 1, 3))],
)
def test_switch_table(requested, expected):
    plan = plan_batch(requested, 4, 2)
    assert (plan.use_accumulation, plan.accum_steps, plan.micro_batch) == expected


def test_accumulation_covers_the_request():
    for req in range(1, 200):
        plan = plan_batch(req, 7, 3)
        if plan.use_accumulation:
            assert plan.effective_batch >= req > 21
        else:
            assert plan.micro_batch == min(req, 7)
