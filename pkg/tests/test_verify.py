import numpy as np
import pytest

from epow.matrix import Matrix, seeded_random_matrix
from epow.tasks import MMCTask, NSubResult, compute_nsubtask, divide_into_subtasks, materialize, partition
from epow.verify import FREIVALDS, SPOT, get_verifier, verify_freivalds, verify_spot


def nsub(b, seed=1):
    task = MMCTask(1, (seeded_random_matrix(seed, b, b), seeded_random_matrix(seed + 1, b, b)))
    return partition(materialize(divide_into_subtasks(task)[0], b))[0]


def corrupt_one(res, nst, r, c, delta=1.0):
    a = res.product.array.copy()
    a[r, c] += delta
    return NSubResult.of(nst, Matrix.wrap(a), res.miner_id)


@pytest.mark.parametrize("verify", [verify_spot, verify_freivalds])
def test_honest_always_accepted(verify, rng):
    for seed in range(30):
        nst = nsub(8, seed)
        assert verify(nst, compute_nsubtask(nst), 5, rng)


def test_spot_reports_location():
    nst = nsub(1)
    res = corrupt_one(compute_nsubtask(nst), nst, 0, 0)
    v = verify_spot(nst, res, 1, np.random.default_rng(0))
    assert not v and v.location == (0, 0)


def test_shape_mismatch_rejected(rng):
    nst = nsub(4)
    bad = NSubResult(nst.task_id, nst.sub_id, nst.nsub_id, Matrix.zeros(3, 3), 0, b"")
    for verify in (verify_spot, verify_freivalds):
        v = verify(nst, bad, 1, rng)
        assert not v and "shape" in v.detail


def test_rounds_must_be_positive(rng):
    nst = nsub(4)
    with pytest.raises(ValueError):
        verify_spot(nst, compute_nsubtask(nst), 0, rng)
    with pytest.raises(ValueError):
        verify_freivalds(nst, compute_nsubtask(nst), 0, rng)


def test_fabricated_rejected_by_single_spot(rng):
    nst = nsub(8)
    rejected = 0
    for _ in range(1000):
        fake = NSubResult.of(nst, Matrix.wrap(rng.integers(-64, 65, (8, 8)).astype(float)), 0)
        rejected += not verify_spot(nst, fake, 1, rng)
    assert rejected >= 999


def test_freivalds_single_round_at_least_half(rng):
    nst = nsub(8)
    honest = compute_nsubtask(nst)
    caught = 0
    for _ in range(10_000):
        r, c = rng.integers(0, 8, 2)
        caught += not verify_freivalds(nst, corrupt_one(honest, nst, r, c), 1, rng)
    assert caught / 10_000 >= 0.5 - 0.015


def test_tolerance_mode(rng):
    nst = nsub(4)
    honest = compute_nsubtask(nst)
    near = NSubResult.of(nst, Matrix.wrap(honest.product.array + 1e-10), 0)
    assert not verify_spot(nst, near, 3, rng)
    assert verify_spot(nst, near, 3, rng, tol=1e-6)
    assert verify_freivalds(nst, near, 3, rng, tol=1e-6)


def test_replayable(rng):
    nst = nsub(8)
    res = corrupt_one(compute_nsubtask(nst), nst, 3, 4)
    a = verify_spot(nst, res, 8, np.random.default_rng(5))
    b = verify_spot(nst, res, 8, np.random.default_rng(5))
    assert a == b


def test_registry():
    assert get_verifier(SPOT) is verify_spot and get_verifier(FREIVALDS) is verify_freivalds
    with pytest.raises(ValueError):
        get_verifier("oracle")
