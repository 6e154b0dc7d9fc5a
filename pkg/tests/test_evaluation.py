import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sstlab import encoder as encmod
from sstlab.data import GALLERY, PROBE, GenSpec, generate
from sstlab.encoder import EncoderConfig, init_encoder
from sstlab.evaluation import (
    ScoreSet,
    balanced_folds,
    build_pairs,
    evaluate,
    extract_features,
    rank1_identification,
    tenfold_accuracy,
    tpr_at_far,
)
from sstlab.siamese import MovingAverage, make_pair
from sstlab.tensor import ContractError

from oracles import exhaustive_tpr, grid_tenfold


def test_separable_scores():
    pts = tpr_at_far(ScoreSet([0.9] * 20, [0.1] * 200))
    assert [p.tpr for p in pts] == [1.0, 1.0, 1.0]
    same = np.r_[np.ones(20, bool), np.zeros(20, bool)]
    assert tenfold_accuracy(np.r_[[0.9] * 20, [0.1] * 20], same, balanced_folds(same)) == 1.0


def test_ten_impostors_far_point_two_admits_two():
    imp = np.arange(10) / 10
    gen = np.array([0.75, 0.8, 0.85, 0.95, 0.3])
    (pt,) = tpr_at_far(ScoreSet(gen, imp), [0.2])
    assert np.sum(imp >= pt.threshold) == 2
    assert pt.tpr == np.mean(gen >= pt.threshold) == 0.8


def test_identical_distributions_give_chance_tpr():
    rng = np.random.default_rng(0)
    pts = tpr_at_far(ScoreSet(rng.uniform(size=20000), rng.uniform(size=20000)), [0.1, 0.01])
    assert pts[0].tpr == pytest.approx(0.1, abs=0.01)
    assert pts[1].tpr == pytest.approx(0.01, abs=0.004)


def test_low_confidence_flag():
    pts = tpr_at_far(ScoreSet([0.5] * 5, np.linspace(0, 1, 50)), [0.1, 0.01])
    assert [p.low_confidence for p in pts] == [False, True]


def test_empty_scores_rejected():
    with pytest.raises(ContractError):
        tpr_at_far(ScoreSet([], [0.1]))


lattice = st.lists(st.integers(0, 20).map(lambda k: k / 20), min_size=1, max_size=10)


@settings(max_examples=200, deadline=None)
@given(lattice, lattice, st.sampled_from([0.1, 0.2, 0.3, 0.5]))
def test_tpr_matches_exhaustive_oracle(gen, imp, far):
    (pt,) = tpr_at_far(ScoreSet(gen, imp), [far])
    assert pt.tpr == exhaustive_tpr(gen, imp, far)
    assert np.sum(np.asarray(imp) >= pt.threshold) <= np.floor(far * len(imp) + 1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-100, 100), min_size=20, max_size=20), st.lists(st.booleans(), min_size=20, max_size=20))
def test_tenfold_matches_grid_sweep_oracle(raw, flags):
    scores = np.array(raw) / 100
    same = np.array(flags)
    same[:10], same[10:] = True, False
    folds = balanced_folds(same, seed=1)
    assert tenfold_accuracy(scores, same, folds) == grid_tenfold(scores, same, folds)


def test_swapped_labels_near_chance():
    rng = np.random.default_rng(1)
    scores = np.r_[rng.normal(0.8, 0.05, 200), rng.normal(0.2, 0.05, 200)]
    same = np.r_[np.zeros(200, bool), np.ones(200, bool)]
    assert tenfold_accuracy(scores, same, balanced_folds(same)) <= 0.55


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 5.0))
def test_tpr_is_monotone_in_far_and_invariant_to_monotone_maps(seed, power):
    rng = np.random.default_rng(seed)
    gen, imp = rng.uniform(size=30), rng.uniform(size=300)
    pts = tpr_at_far(ScoreSet(gen, imp), [0.01, 0.1, 0.3])
    assert pts[0].tpr <= pts[1].tpr <= pts[2].tpr
    warped = tpr_at_far(ScoreSet(gen ** power, imp ** power), [0.01, 0.1, 0.3])
    assert [p.tpr for p in warped] == [p.tpr for p in pts]


def test_rank1_examples():
    rng = np.random.default_rng(2)
    f = rng.standard_normal((12, 5))
    ids = np.arange(12)
    assert rank1_identification(f, ids, f, ids) == 1.0
    # equal scores: the lower gallery index wins
    g = np.array([[1.0, 0.0], [1.0, 0.0]])
    assert rank1_identification(g, [3, 4], np.array([[1.0, 0.0]]), [3]) == 1.0
    assert rank1_identification(g, [3, 4], np.array([[1.0, 0.0]]), [4]) == 0.0
    with pytest.raises(ContractError):
        rank1_identification(g, [3, 4], np.array([[1.0, 0.0]]), [9])


def test_rank1_random_features_near_chance():
    rng = np.random.default_rng(3)
    n, trials = 20, 300
    acc = np.mean([rank1_identification(rng.standard_normal((n, 8)), np.arange(n),
                                        rng.standard_normal((n, 8)), np.arange(n)) for _ in range(trials)])
    assert acc == pytest.approx(1 / n, abs=0.015)


def test_build_pairs_counts_and_determinism():
    ds = generate(GenSpec(n_ids=60, seed=0))
    sel = ds.splits == 1
    feats, ids, roles = ds.vectors[sel], ds.ids[sel], ds.roles[sel]
    n = len(np.unique(ids))
    s = build_pairs(feats, ids, roles, max_impostors=50, seed=4)
    assert len(s.genuine) == n and len(s.impostor) == 50
    assert (ids[s.impostor_pairs[:, 0]] != ids[s.impostor_pairs[:, 1]]).all()
    assert (ids[s.genuine_pairs[:, 0]] == ids[s.genuine_pairs[:, 1]]).all()
    again = build_pairs(feats, ids, roles, max_impostors=50, seed=4)
    np.testing.assert_array_equal(again.impostor_pairs, s.impostor_pairs)
    full = build_pairs(feats, ids, roles)
    assert len(full.impostor) == n * (n - 1)


def test_extract_features_uses_probe_net_only(monkeypatch):
    pair = make_pair(init_encoder(EncoderConfig(32, (8,), 4)), MovingAverage())
    calls = []
    real = encmod.forward

    def spy(enc, batch, grad=True):
        calls.append(enc)
        return real(enc, batch, grad)

    monkeypatch.setattr("sstlab.evaluation.forward", spy)
    x = np.random.default_rng(0).standard_normal((3, 32))
    out = extract_features(pair, np.vstack([x, x[:1]]))
    assert all(c is pair.probe_net for c in calls) and calls
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-9)
    np.testing.assert_array_equal(out[0], out[3])


def test_evaluate_report_keys_and_untrained_chance():
    ds = generate(GenSpec(n_ids=300, seed=1))
    rep = evaluate(init_encoder(EncoderConfig(32, (128,), 64, seed=5)), ds)
    for key in ("tenfold_accuracy", "rank1", "n_genuine", "n_impostor", "tpr@far=0.01", "threshold@far=0.1"):
        assert key in rep
    assert rep["n_genuine"] == rep["n_test_ids"] == 50
    assert 0.0 <= rep["rank1"] <= 1.0
