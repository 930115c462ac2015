import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polycone import kernels
from polycone.environment import Environment, PotentialSpec, column_fixture, trap_shell_fixture
from polycone.errors import BudgetExceeded
from polycone.lattice import (LatticePath, LatticePoint, cone_points, in_backward_cone, in_cone,
                              is_cone_confined, origin, point, unit_steps)
from polycone.pathsum import (KINDS, ModelParams, PathEnsembleSpec, column_first_passage,
                              enumerate_partition, enumerate_table, free_first_passage,
                              quenched_partition, quenched_t_by_convolution, restricted_weights,
                              slab_green)

ZERO = PotentialSpec("constant_zero")


def _walks(d, max_len):
    steps = unit_steps(d)
    o = origin(d)
    for n in range(1, max_len + 1):
        for seq in itertools.product(steps, repeat=n):
            pts = [o]
            for s in seq:
                pts.append(pts[-1] + s)
            yield LatticePath(tuple(pts))


def _inside(x, apex, up):
    # strict cone of half-opening 2 (|dperp| < 2 dh), the apex excluded
    dh = (x.par - apex.par) * up
    n2 = sum((a - b) ** 2 for a, b in zip(x.perp, apex.perp))
    return dh > 0 and n2 < 4 * dh * dh


def _member(kind, path, N):
    pts = path.points
    end = pts[-1]
    if end.par != N:
        return False
    first_arrival = all(x.par < N for x in pts[:-1])
    if kind == "D":
        return first_arrival
    fwd = all(_inside(x, pts[0], 1) for x in pts[1:])
    bwd = all(_inside(x, end, -1) for x in pts[:-1])
    no_cp = not cone_points(path)
    if kind == "T":
        return fwd and bwd
    if kind == "T0":
        return fwd and bwd and no_cp
    if kind == "Tl":
        return bwd and no_cp
    if kind == "Tr":
        return fwd and first_arrival and no_cp
    raise ValueError(kind)


def brute_force(kind, env, params, N, max_len):
    """Sum of path weights over every nearest-neighbour walk in the family."""
    total = 0.0
    for path in _walks(params.d, max_len):
        if not _member(kind, path, N):
            continue
        w = math.exp(-params.lam * path.n)
        if params.beta:
            for x in path.points[1:]:
                v = env.values(np.array([x.coords()]))[0]
                w *= 0.0 if math.isinf(v) else math.exp(-params.beta * v)
        total += w
    return total


def test_cone_helpers_agree_with_confinement():
    for path in _walks(1, 5):
        pts = path.points
        both = all(_inside(x, pts[0], 1) for x in pts[1:]) and all(_inside(x, pts[-1], -1) for x in pts[:-1])
        assert both == is_cone_confined(path)
        for x in pts[1:]:
            assert in_cone(x, pts[0]) == (x == pts[0] or _inside(x, pts[0], 1))


FROZEN = {"D": 0.0009705250260022, "T": 0.000776846233008, "T0": 2.5831041907e-05,
          "Tl": 4.528051722535e-05, "Tr": 3.577262195506e-05}


@pytest.mark.parametrize("kind", KINDS)
def test_enumeration_matches_brute_force_free(kind):
    params = ModelParams(1, 2.5)
    env = Environment(ZERO, 0)
    value, tail = enumerate_partition(env, params, 3, 7, PathEnsembleSpec(kind, 3))
    assert value == pytest.approx(brute_force(kind, env, params, 3, 7), rel=1e-12)
    assert value == pytest.approx(FROZEN[kind], rel=1e-9)
    assert tail > 0


@pytest.mark.parametrize("kind", KINDS)
def test_enumeration_matches_brute_force_disordered(kind):
    params = ModelParams(1, 2.2, beta=0.7)
    env = Environment(PotentialSpec("exp_trap", p=0.15, rate=1.3), 21)
    value, _ = enumerate_partition(env, params, 2, 6, PathEnsembleSpec(kind, 2))
    assert value == pytest.approx(brute_force(kind, env, params, 2, 6), rel=1e-12)


def test_enumeration_brute_force_two_dimensions():
    params = ModelParams(2, 2.5, beta=0.4)
    env = Environment(PotentialSpec("two_point", v=1.0, rho=0.4), 8)
    for kind in ("D", "T", "T0"):
        value, _ = enumerate_partition(env, params, 2, 4, PathEnsembleSpec(kind, 2))
        assert value == pytest.approx(brute_force(kind, env, params, 2, 4), rel=1e-12)


def test_endpoint_resolution_sums_to_total():
    params = ModelParams(1, 2.5)
    env = Environment(ZERO, 0)
    w = restricted_weights(env, params, 3, "T", 7)
    assert w.total() == pytest.approx(FROZEN["T"], rel=1e-12)
    x = point(1, 3)
    single, _ = enumerate_partition(env, params, 3, 7, PathEnsembleSpec("T", 3, endpoint=x))
    assert single == pytest.approx(w.by_endpoint[x], rel=1e-12)
    assert w.by_endpoint[x] == pytest.approx(w.by_endpoint[point(-1, 3)], rel=1e-12)


def test_free_first_passage_closed_form():
    assert free_first_passage(1, 2.5) == pytest.approx(0.09917368211775773, rel=1e-15)
    # F solves a F^2 + (2 d a - 1) F + a = 0
    for d, lam in [(1, 2.0), (2, 3.0), (3, 2.5)]:
        a, F = math.exp(-lam), free_first_passage(d, lam)
        assert a * F * F + (2 * d * a - 1) * F + a == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("d,lam,N", [(1, 2.5, 1), (1, 2.5, 4), (2, 3.0, 3)])
def test_sweep_matches_free_power(d, lam, N):
    env = Environment(ZERO, 0)
    res = slab_green(env, ModelParams(d, lam), N, 1e-12)
    exact = free_first_passage(d, lam) ** N
    assert abs(res.value - exact) <= 1e-12 * max(1.0, exact) + res.error_bound
    assert res.value <= exact * (1 + 1e-12)


def test_sweep_matches_enumeration_with_disorder():
    params = ModelParams(1, 3.0, beta=0.8)
    env = Environment(PotentialSpec("two_point", v=1.5, rho=0.3, p=0.05), 4)
    swept = quenched_partition(env, params, 3, 1e-14)
    value, tail = enumerate_partition(env, params, 3, 15)
    assert abs(swept - value) <= tail + 1e-13


def test_column_fixture():
    params = ModelParams(1, 2.5, beta=1.0)
    res = slab_green(column_fixture(1), params, 5, 1e-13)
    assert res.value == pytest.approx(3.8556745892e-06, rel=1e-9)
    assert res.value == pytest.approx(column_first_passage(2.5) ** 5, rel=1e-9)


def test_trap_shell_blocks_everything():
    params = ModelParams(2, 3.0, beta=1.0)
    env = trap_shell_fixture(2, radius=1)
    assert slab_green(env, params, 3, 1e-12).value == 0.0
    for kind in KINDS:
        assert enumerate_partition(env, params, 2, 5, PathEnsembleSpec(kind, 2))[0] == 0.0


def test_convolution_equals_enumeration():
    params = ModelParams(1, 2.3, beta=0.6)
    env = Environment(PotentialSpec("exp_trap", p=0.1), 13)
    direct = enumerate_table("T", params, 5, 4, env=env)
    built = quenched_t_by_convolution(env, params, 5, 4)
    np.testing.assert_allclose(built.data, direct.data, rtol=1e-12, atol=1e-300)


@settings(max_examples=15)
@given(st.floats(0.0, 2.0), st.floats(0.0, 2.0), st.integers(0, 1000))
def test_monotone_in_beta(b1, b2, seed):
    lo, hi = sorted((b1, b2))
    env = Environment(PotentialSpec("two_point", v=1.0, rho=0.3), seed)
    z_lo = enumerate_partition(env, ModelParams(1, 2.2, lo), 3, 7)[0]
    z_hi = enumerate_partition(env, ModelParams(1, 2.2, hi), 3, 7)[0]
    assert z_hi <= z_lo * (1 + 1e-12)


@settings(max_examples=15)
@given(st.floats(1.8, 4.0), st.floats(1.8, 4.0), st.sampled_from(KINDS))
def test_monotone_in_lambda(l1, l2, kind):
    lo, hi = sorted((l1, l2))
    env = Environment(ZERO, 0)
    z_lo = enumerate_partition(env, ModelParams(1, lo), 2, 6, PathEnsembleSpec(kind, 2))[0]
    z_hi = enumerate_partition(env, ModelParams(1, hi), 2, 6, PathEnsembleSpec(kind, 2))[0]
    assert z_hi <= z_lo * (1 + 1e-12)


def test_parameter_validation():
    with pytest.raises(ValueError):
        ModelParams(1, math.log(4))
    with pytest.raises(ValueError):
        ModelParams(1, 2.0, beta=-1)
    with pytest.raises(ValueError):
        PathEnsembleSpec("X", 3)
    with pytest.raises(ValueError):
        enumerate_partition(Environment(ZERO, 0), ModelParams(1, 2.5), 4, 3)


def test_budget_exceeded():
    with pytest.raises(BudgetExceeded):
        enumerate_partition(Environment(ZERO, 0), ModelParams(2, 3.0), 4, 12, budget_nodes=1000)
