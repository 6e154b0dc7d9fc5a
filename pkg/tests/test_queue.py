from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sstlab.queue import SENTINEL_ID, GalleryQueue, enqueue_batch, init_queue, load_csv, negatives_for
from sstlab.tensor import ContractError


def _unit_rows(n, dim, seed):
    x = np.random.default_rng(seed).standard_normal((n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def test_same_seed_same_initial_contents():
    a, b = init_queue(8, 4, seed=3), init_queue(8, 4, seed=3)
    np.testing.assert_array_equal(a.features, b.features)
    assert (a.ids == SENTINEL_ID).all()
    np.testing.assert_allclose(np.linalg.norm(a.features, axis=1), 1.0, atol=1e-12)


def test_fifo_one_at_a_time():
    q = init_queue(4, 3)
    feats = _unit_rows(6, 3, 0)
    for i in range(6):
        enqueue_batch(q, feats[i:i + 1], [i + 1])
    f, ids = q.ordered()
    assert ids.tolist() == [3, 4, 5, 6]
    np.testing.assert_array_equal(f, feats[2:])


def test_two_batches_keep_arrival_order():
    q = init_queue(4, 3)
    feats = _unit_rows(4, 3, 1)
    enqueue_batch(q, feats[:2], [10, 11])
    enqueue_batch(q, feats[2:], [12, 13])
    f, ids = q.ordered()
    assert ids.tolist() == [10, 11, 12, 13]
    np.testing.assert_array_equal(f, feats)


def test_rejects_non_unit_rows_and_bad_shapes():
    q = init_queue(4, 3)
    with pytest.raises(ContractError):
        q.enqueue(np.full((1, 3), 1.0), [0])
    with pytest.raises(ContractError):
        q.enqueue(_unit_rows(2, 3, 0), [0])
    with pytest.raises(ContractError):
        q.enqueue(_unit_rows(1, 4, 0), [0])


def test_negatives_for_examples():
    q = init_queue(4, 3)
    enqueue_batch(q, _unit_rows(4, 3, 2), [1, 2, 3, 4])
    assert len(negatives_for(q, 9)) == 4
    assert len(negatives_for(q, 3)) == 3


def test_csv_dump_round_trip(tmp_path):
    q = init_queue(5, 3, seed=1)
    enqueue_batch(q, _unit_rows(3, 3, 4), [7, 8, 9])
    q.dump_csv(tmp_path / "q.csv")
    feats, ids = load_csv(tmp_path / "q.csv")
    np.testing.assert_array_equal(feats, q.features)
    np.testing.assert_array_equal(ids, q.ids)


def test_shadow_fifo_over_ten_thousand_operations():
    rng = np.random.default_rng(42)
    K, dim = 37, 4
    q = GalleryQueue(K, dim, seed=0)
    init_f, init_ids = q.ordered()
    shadow = deque(zip(map(tuple, init_f), init_ids.tolist()), maxlen=K)
    ops = 0
    while ops < 10_000:
        b = int(rng.integers(1, 2 * K))
        feats = _unit_rows(b, dim, int(rng.integers(2**31)))
        ids = rng.integers(0, 50, size=b)
        q.enqueue(feats, ids)
        shadow.extend(zip(map(tuple, feats), ids.tolist()))
        ops += b
        f, got = q.ordered()
        assert got.tolist() == [i for _, i in shadow]
        np.testing.assert_array_equal(f, np.array([r for r, _ in shadow]))
        probe = int(rng.integers(0, 50))
        mask = q.negative_mask([probe])[0]
        assert (q.ids[mask] != probe).all()
        assert mask.sum() == sum(1 for _, i in shadow if i != probe)
    assert q.total_enqueued == ops and len(q) == K


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 9), min_size=1, max_size=30), st.integers(1, 8))
def test_mask_never_admits_own_identity(ids, K):
    q = GalleryQueue(K, 3, seed=0)
    q.enqueue(_unit_rows(len(ids), 3, 0), ids)
    probes = np.arange(10)
    mask = q.negative_mask(probes)
    assert not (mask & (q.ids[None, :] == probes[:, None])).any()
    for p in probes:
        assert len(q.negatives_for(int(p))) == int((q.ids != p).sum())
