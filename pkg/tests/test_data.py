import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sstlab.data import (
    GALLERY,
    PROBE,
    TEST,
    TRAIN,
    DatasetFormatError,
    GenSpec,
    dumps,
    generate,
    load,
    loads,
    sample_batch,
    save,
)
from sstlab.tensor import ContractError


def _mean_genuine_cosine(ds):
    g = ds.vectors[ds.roles == GALLERY]
    p = ds.vectors[ds.roles == PROBE]
    g = g / np.linalg.norm(g, axis=1, keepdims=True)
    p = p / np.linalg.norm(p, axis=1, keepdims=True)
    return float(np.mean(np.sum(g * p, axis=1)))


def test_record_count_and_split():
    ds = generate(GenSpec(n_ids=100, depth=2))
    assert len(ds) == 200
    assert ds.n_train_ids + len(ds.test_ids) == 100
    assert set(ds.train_ids).isdisjoint(ds.test_ids)
    assert len(ds.test_ids) == round(100 / 6)


def test_default_split_sizes():
    ds = generate(GenSpec())
    assert ds.n_train_ids == 1000 and len(ds.test_ids) == 200


def test_noise_free_unshifted_pairs_coincide():
    ds = generate(GenSpec(n_ids=50, sigma_intra=0.0, shift_strength=0.0))
    np.testing.assert_array_equal(ds.vectors[ds.roles == GALLERY], ds.vectors[ds.roles == PROBE])


def test_each_id_has_one_gallery_record_at_depth_two():
    ds = generate(GenSpec(n_ids=30))
    for i in range(30):
        roles = ds.roles[ds.records_of(i)]
        assert sorted(roles.tolist()) == [GALLERY, PROBE]


def test_genuine_cosine_falls_with_noise():
    low = generate(GenSpec(n_ids=200, sigma_intra=0.05, seed=4))
    high = generate(GenSpec(n_ids=200, sigma_intra=0.5, seed=4))
    assert _mean_genuine_cosine(low) > _mean_genuine_cosine(high)


def test_generation_is_deterministic():
    assert dumps(generate(GenSpec(n_ids=40, seed=7))) == dumps(generate(GenSpec(n_ids=40, seed=7)))
    assert dumps(generate(GenSpec(n_ids=40, seed=7))) != dumps(generate(GenSpec(n_ids=40, seed=8)))


def test_spec_validation():
    for bad in (dict(depth=1), dict(n_ids=1), dict(test_fraction=1.0), dict(sigma_intra=-1.0)):
        with pytest.raises(ValueError):
            GenSpec(**bad)


def test_sample_batch_shallow_routes_roles():
    ds = generate(GenSpec(n_ids=60, seed=1))
    g, p, ids = sample_batch(ds, 16, 0)
    assert g.shape == p.shape == (16, ds.input_dim)
    assert len(set(ids.tolist())) == 16
    assert set(ids.tolist()) <= set(ds.train_ids.tolist())
    for row, ident in zip(g, ids):
        rec = ds.records_of(ident)
        gal = rec[ds.roles[rec] == GALLERY][0]
        np.testing.assert_array_equal(row, ds.vectors[gal])
    with pytest.raises(ContractError):
        sample_batch(ds, ds.n_train_ids + 1, 0)


def test_deep_sampling_gives_each_record_both_roles_evenly():
    ds = generate(GenSpec(n_ids=40, depth=4, seed=2))
    rng = np.random.default_rng(0)
    hits = gal = 0
    target = ds.records_of(ds.train_ids[0])[0]
    for _ in range(4000):
        g, p, ids = sample_batch(ds, ds.n_train_ids, rng)
        k = int(np.flatnonzero(ids == ds.train_ids[0])[0])
        v = ds.vectors[target]
        in_g, in_p = np.array_equal(g[k], v), np.array_equal(p[k], v)
        if in_g or in_p:
            hits += 1
            gal += in_g
    assert abs(gal / hits - 0.5) <= 0.02


def test_sample_batch_is_seeded():
    ds = generate(GenSpec(n_ids=60, seed=1))
    a = sample_batch(ds, 8, 5)
    b = sample_batch(ds, 8, 5)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


@settings(max_examples=10, deadline=None)
@given(st.integers(2, 30), st.integers(2, 4), st.integers(0, 1000))
def test_save_load_round_trip(n_ids, depth, seed):
    ds = generate(GenSpec(n_ids=n_ids, depth=depth, input_dim=5, seed=seed))
    back = loads(dumps(ds))
    np.testing.assert_array_equal(back.vectors, ds.vectors)
    np.testing.assert_array_equal(back.ids, ds.ids)
    np.testing.assert_array_equal(back.roles, ds.roles)
    np.testing.assert_array_equal(back.splits, ds.splits)


def test_file_round_trip(tmp_path):
    ds = generate(GenSpec(n_ids=12, seed=3))
    save(ds, tmp_path / "d.csv")
    assert dumps(load(tmp_path / "d.csv")) == dumps(ds)


def test_loader_reports_line_numbers():
    text = dumps(generate(GenSpec(n_ids=4, input_dim=3)))
    with pytest.raises(DatasetFormatError, match="version"):
        loads(text.replace("sstdata v1", "sstdata v9", 1))
    with pytest.raises(DatasetFormatError, match="line"):
        loads("\n".join(text.splitlines()[:-2]))
    lines = text.splitlines()
    lines[3] = lines[3].rsplit(",", 1)[0]
    with pytest.raises(DatasetFormatError, match="line 4"):
        loads("\n".join(lines))
    lines = text.splitlines()
    lines[2] = lines[2].replace("gallery", "lobby").replace("probe", "lobby")
    with pytest.raises(DatasetFormatError, match="line 3"):
        loads("\n".join(lines))
    with pytest.raises(DatasetFormatError):
        loads("")


def test_split_view():
    ds = generate(GenSpec(n_ids=24, seed=0))
    test = ds.split_view(TEST)
    assert set(test["ids"].tolist()) == set(ds.test_ids.tolist())
    assert len(ds.split_view(TRAIN)["ids"]) == 2 * ds.n_train_ids


def test_comment_lines_are_skipped_and_counted():
    ds = generate(GenSpec(n_ids=6, input_dim=3))
    text = dumps(ds, comments=["made by a test", "second note"])
    assert text.splitlines()[1] == "# made by a test"
    assert dumps(loads(text)) == dumps(ds)
    lines = text.splitlines()
    lines[4] = "1,probe"
    with pytest.raises(DatasetFormatError, match="line 5"):
        loads("\n".join(lines))
