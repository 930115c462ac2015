import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from polycone.annealed import (RenewalTable, annealed_partition_exact, annealed_path_weight,
                               cone_weights_exact, deconvolve_irreducible, diffusivity,
                               excess_table_to_dict, irreducible_masses, renewal_sequence,
                               renewal_tables, second_moment_gap, tilted_phi)
from polycone.environment import PotentialSpec
from polycone.errors import NonConvergence
from polycone.lattice import LatticePoint
from polycone.pathsum import ModelParams, PathEnsembleSpec, enumerate_table, free_first_passage

from test_pathsum import _member, _walks

ZERO = PotentialSpec("constant_zero")


def toy(a=0.3, b=0.4, N_max=60):
    return RenewalTable.from_atoms({LatticePoint((1,), 1): a, LatticePoint((-1,), 1): a,
                                    LatticePoint((0,), 2): b}, N_max)


def toy_phi(a, b, z):
    # e^{-phi} = w solves b w^2 + 2 a cosh(z) w - 1 = 0
    c = a * math.cosh(z)
    return -math.log((-2 * c + math.sqrt(4 * c * c + 4 * b)) / (2 * b))


@pytest.fixture(scope="module")
def free_table():
    return renewal_tables(ModelParams(1, 2.5), ZERO, 24, 16)


def test_exact_cone_weights_match_long_enumeration():
    params = ModelParams(1, 2.5)
    exact = cone_weights_exact(params, 4)
    enum = enumerate_table("T", params, 4, 14, annealed_spec=ZERO)
    approx = excess_table_to_dict(enum, 4)
    assert set(approx) == set(exact)
    tail = params.contraction ** 15 / (1 - params.contraction)
    for x, w in exact.items():
        assert approx[x] <= w * (1 + 1e-12)
        assert w - approx[x] <= tail


def test_deconvolution_inverts_renewal():
    params = ModelParams(2, 3.0)
    t = cone_weights_exact(params, 5)
    Q = deconvolve_irreducible(t, 2, 5)
    # rebuild t_x = Q_x + sum_y t_y Q_{x-y}
    for x, w in t.items():
        acc = Q.get(x, 0.0)
        for y, ty in t.items():
            if 0 < y.par < x.par:
                acc += ty * Q.get(x - y, 0.0)
        assert acc == pytest.approx(w, rel=1e-11)


def test_exact_and_enumerated_masses_agree():
    params = ModelParams(1, 2.5)
    Qe, m1 = irreducible_masses(params, ZERO, 5)
    Qn, m2 = irreducible_masses(params, ZERO, 5, excess=12)
    assert (m1, m2) == ("exact", "enumerate")
    for x, w in Qe.items():
        assert Qn.get(x, 0.0) == pytest.approx(w, rel=1e-5)


def test_lyapunov_matches_first_passage(free_table):
    # at zero disorder exp(-xi) equals the free first-passage root
    F = free_first_passage(1, 2.5)
    assert math.exp(-free_table.xi) == pytest.approx(F, rel=1e-7)
    assert abs(math.exp(-free_table.xi) - F) <= F * (free_table.tail_bound + 1e-12)
    assert free_table.q_by_height[1:].sum() == pytest.approx(1.0, abs=1e-14)


def test_free_table_frozen(free_table):
    assert free_table.mu == pytest.approx(1.2559618885313377, rel=1e-9)
    assert diffusivity(free_table, richardson=True).sigma2 == pytest.approx(0.200317231582, rel=1e-7)
    assert free_table.renewal_residual() <= 1e-15


def test_renewal_limit(free_table):
    t = renewal_sequence(free_table.q_by_height, 200)
    assert t[-1] == pytest.approx(1 / free_table.mu, rel=1e-10)


def _two_point_expectation(path, beta, spec):
    m = 1.0
    for ell in Counter(path.points[1:]).values():
        m *= (1 - spec.rho - spec.p) + spec.rho * math.exp(-beta * ell * spec.v)
    return m


def test_annealed_enumeration_matches_direct_expectation():
    spec = PotentialSpec("two_point", v=1.2, rho=0.35, p=0.05)
    params = ModelParams(1, 2.2, beta=0.9)
    for kind in ("D", "T0", "Tr"):
        value, _ = annealed_partition_exact(params, spec, 2, 6, PathEnsembleSpec(kind, 2))
        direct = 0.0
        for path in _walks(1, 6):
            if _member(kind, path, 2):
                w = math.exp(-params.lam * path.n) * _two_point_expectation(path, params.beta, spec)
                assert annealed_path_weight(path, params, spec) == pytest.approx(w, rel=1e-12)
                direct += w
        assert value == pytest.approx(direct, rel=1e-12)


def test_toy_tilt_closed_form():
    table = toy()
    r0 = tilted_phi(table, [0.0])
    assert abs(r0.phi) <= 1e-12
    for z in (-1.0, -0.3, 0.0, 0.4, 1.2):
        assert tilted_phi(table, [z]).phi == pytest.approx(toy_phi(0.3, 0.4, z), abs=1e-10)


@given(st.floats(0.05, 0.45), st.floats(-2.0, 2.0))
def test_toy_tilt_property(a, z):
    b = 1 - 2 * a
    table = toy(a, b, 4)
    res = tilted_phi(table, [z])
    assert res.phi == pytest.approx(toy_phi(a, b, z), abs=1e-10)
    assert res.phi >= -1e-12  # phi is minimal at z = 0
    assert res.phi == pytest.approx(tilted_phi(table, [-z]).phi, abs=1e-12)


def test_toy_diffusivity():
    est = diffusivity(toy(), richardson=True)
    assert est.sigma2 == pytest.approx(3 / 7, abs=1e-7)
    assert est.second_moment_sigma2 == pytest.approx(3 / 7, rel=1e-14)


def test_toy_gap_scales_inverse_linearly():
    table = toy(N_max=0)
    gaps = second_moment_gap(table, [8, 16, 24, 48], 3 / 7)
    A = [N * g for N, g in gaps.items()]
    assert max(A) - min(A) <= 0.01 * abs(A[-1])
    assert gaps[16] / gaps[8] == pytest.approx(0.5, rel=0.3)


def test_tilt_radius_and_nonconvergence(free_table):
    with pytest.raises(ValueError):
        tilted_phi(free_table, [10.0])
    with pytest.raises(ValueError):
        tilted_phi(toy(), [0.1, 0.2])
    with pytest.raises(NonConvergence):
        tilted_phi(toy(), [0.5], max_iter=1)


def test_serialization_round_trip(tmp_path, free_table):
    path = tmp_path / "t.json"
    free_table.to_json(path)
    back = RenewalTable.from_json(str(path))
    assert back.to_json() == free_table.to_json()
    assert back.q_by_endpoint == free_table.q_by_endpoint
    with pytest.raises(ValueError):
        RenewalTable.from_dict({**free_table.to_dict(), "version": 99})


def test_exact_engine_refuses_disorder():
    with pytest.raises(ValueError):
        irreducible_masses(ModelParams(1, 2.5, 0.5), PotentialSpec("exp_trap"), 4, method="exact")
    with pytest.raises(ValueError):
        irreducible_masses(ModelParams(1, 2.5, 0.5), PotentialSpec("exp_trap"), 4)
