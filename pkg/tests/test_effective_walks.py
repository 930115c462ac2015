import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polycone.annealed import RenewalTable
from polycone.effective_walks import (StepLaw, SyncStep, bubble_statistics, diamond_intersection_number,
                                      exact_sync_law, first_sync_spans, intersection_vs_separation,
                                      near_collision, sample_walk, sample_walks, sampled_sync_law,
                                      surrogate_violations, sync_bound, sync_span_tail, synchronize)
from polycone.lattice import ConeAperture, LatticePoint, point

AP = ConeAperture()


def law_1d():
    return StepLaw({point(0, 1): 0.45, point(1, 1): 0.15, point(-1, 1): 0.15,
                    point(0, 2): 0.1, point(2, 2): 0.05, point(-3, 2): 0.05, point(1, 3): 0.05})


def law_2d():
    return StepLaw({point(0, 0, 1): 0.4, point(1, 0, 1): 0.1, point(0, -1, 1): 0.1,
                    point(1, 1, 2): 0.2, point(-2, 0, 2): 0.1, point(0, 3, 3): 0.1})


def test_law_validation():
    with pytest.raises(ValueError):
        StepLaw({point(0, 0): 1.0})
    with pytest.raises(ValueError):
        StepLaw({point(2, 1): 1.0})  # on the cone boundary
    with pytest.raises(ValueError):
        StepLaw({point(0, 1): 0.5})
    with pytest.raises(ValueError):
        SyncStep(2, point(0, 2), point(0, 1))


def test_law_from_table_and_hash():
    table = RenewalTable.from_atoms({point(1, 1): 0.3, point(-1, 1): 0.3, point(0, 2): 0.4})
    law = StepLaw.from_table(table)
    assert law.atoms == table.q_by_endpoint
    assert len(law.source_hash) == 16
    assert StepLaw.from_table(RenewalTable.from_json(table.to_json())).source_hash == law.source_hash


def test_single_atom_ray():
    law = StepLaw({point(1, 2): 1.0})
    path = sample_walk(law, 5, 3)
    assert path == [point(k, 2 * k) for k in range(6)]


def test_sampler_frequencies():
    law = law_1d()
    idx = law.sample_indices(np.random.default_rng(0), 1_000_000)
    counts = np.bincount(idx, minlength=len(law.keys))
    n = idx.size
    for c, p in zip(counts, law.prob):
        assert abs(c - n * p) <= 4 * math.sqrt(n * p * (1 - p))


@given(st.integers(0, 10_000))
def test_heights_increase(seed):
    W = sample_walks(law_2d(), 3, 20, np.random.default_rng(seed), start=(5, -2, 0))
    assert (np.diff(W[:, :, -1], axis=1) >= 1).all()
    assert (W[:, 0] == [5, -2, 0]).all()


def _ray(heights, perp=0):
    return [point(perp, h) for h in heights]


def test_synchronize_example():
    x = _ray([0, 2, 4, 6])
    y = _ray([0, 3, 6])
    steps = synchronize(x, y)
    assert steps == [SyncStep(6, point(0, 6), point(0, 6))]
    with pytest.raises(ValueError):
        synchronize(_ray([1, 2]), y)


@given(st.integers(0, 10_000))
def test_synchronize_properties(seed):
    law = law_2d()
    x = sample_walk(law, 15, seed)
    y = sample_walk(law, 15, seed + 1)
    steps = synchronize(x, y)
    common = sorted(set(p.par for p in x) & set(p.par for p in y))
    assert sum(s.t for s in steps) == common[-1]  # spans add up to the last common height
    assert len(steps) == len(common) - 1
    same = synchronize(x, x)
    assert [s.t for s in same] == [b.par - a.par for a, b in zip(x, x[1:])]
    assert all(s.u == s.v for s in same)


def test_exact_sync_law_two_heights():
    a, b = 0.7, 0.3
    law = StepLaw({point(0, 1): a, point(0, 2): b})
    ex = exact_sync_law(law, 2)
    assert ex[(1, (0,), (0,))] == pytest.approx(a * a, rel=1e-14)
    # both skip height 1, or exactly one of them does
    assert ex[(2, (0,), (0,))] == pytest.approx(b * b + 2 * a * a * b, rel=1e-14)


def test_sampled_sync_law_matches_exact():
    law = law_1d()
    pairs = 400_000
    ex = exact_sync_law(law, 4)
    sm = sampled_sync_law(law, pairs, 11, 4)
    assert set(sm) <= set(ex)
    for key, p in ex.items():
        if pairs * p >= 50:
            got = sm.get(key, 0.0)
            assert abs(got - p) <= 4 * math.sqrt(p * (1 - p) / pairs), key
    for t in range(1, 5):
        p = sum(v for k, v in ex.items() if k[0] == t)
        got = sum(v for k, v in sm.items() if k[0] == t)
        assert abs(got - p) <= 4 * math.sqrt(p * (1 - p) / pairs)


def test_near_collision_is_strict():
    assert near_collision(1, (3,), AP)
    assert not near_collision(1, (4,), AP)
    assert near_collision(2, (3, 4), AP) and not near_collision(1, (3, 4), AP)


def test_intersection_number_extremes():
    law = law_2d()
    x = sample_walk(law, 12, 4)
    far = [LatticePoint((p.perp[0] + 1000, p.perp[1]), p.par) for p in x]
    assert diamond_intersection_number(x, far, AP) == 0
    assert diamond_intersection_number(x, x, AP) >= len(x) - 1


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.integers(4, 30))
def test_sync_bound_dominates(seed, horizon):
    law = law_1d()
    x = sample_walk(law, 25, seed)
    y = sample_walk(law, 25, seed + 7)
    assert diamond_intersection_number(x, y, AP, horizon) <= sync_bound(x, y, AP, horizon)
    assert surrogate_violations(x, y, AP) == 0


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_surrogate_sound_in_two_dimensions(seed):
    law = law_2d()
    x = sample_walk(law, 20, seed)
    y = sample_walk(law, 20, seed + 1)
    assert surrogate_violations(x, y, AP) == 0
    assert diamond_intersection_number(x, y, AP, 15) <= sync_bound(x, y, AP, 15)


def test_first_sync_spans_thread_independent():
    law = law_1d()
    a = first_sync_spans(law, 9000, 3, 40)
    b = first_sync_spans(law, 9000, 3, 40, threads=3)
    assert np.array_equal(a, b)
    assert a.min() >= 1 and a.max() <= 41


def test_sync_tail_decays():
    rep = sync_span_tail(law_1d(), 20_000, 5, (2, 8))
    assert rep.fitted["kappa"] > 0 and rep.fitted["r2"] > 0.9
    tails = [rep.per_N[l]["tail"] for l in sorted(rep.per_N)]
    assert all(a >= b for a, b in zip(tails, tails[1:]))


def test_bubbles_vanish_when_walks_never_approach():
    law = StepLaw({point(0, 0, 1): 1.0})
    rep = bubble_statistics(law, AP, 200, 1, B_list=(4, 8), start_perp=(4, 0), moment_replicas=50)
    assert all(rep.per_N[B]["mean"] == 0.0 for B in (4, 8))
    assert rep.extra["S_max"] == 0
    for entry in rep.extra["exp_moments"].values():
        assert entry["full"]["mean"] == 1.0
    close = bubble_statistics(law, AP, 50, 1, B_list=(4, 8), start_perp=(3, 0), moment_replicas=0)
    assert close.per_N[4]["mean"] == 1.0  # one unit span ending at height 4, always near


def test_bubble_moments_at_zero_eta():
    rep = bubble_statistics(law_2d(), AP, 300, 2, B_list=(4, 8), moment_replicas=100)
    m = rep.extra["exp_moments"]["0.0"]
    assert m["full"]["mean"] == 1.0 and m["half"]["mean"] == 1.0
    assert rep.extra["moment_replicas"] == 100
    assert {"trend_slope", "trend_se", "increasing_trend"} <= set(rep.fitted)


def test_intersections_drop_with_separation():
    rep = intersection_vs_separation(law_2d(), AP, [2, 6, 12], 300, 4, 12)
    means = [rep.per_N[r]["mean"] for r in (2, 6, 12)]
    assert means[0] > means[-1]
