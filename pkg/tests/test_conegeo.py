import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hessianlab import conegeo
from hessianlab.conegeo import (
    LevelSetHandle,
    boundary_point,
    cplus_margins,
    dichotomy_witness,
    estimate_rank,
    h_mu_profile,
    membership_cplus,
    membership_ctilde,
    orthogonal_directions,
    refine_ladder,
    shell_samples,
)
from hessianlab.errors import HypothesisFailed, OutsideCone, RayStaysInside
from hessianlab.symfun import OperatorSpec


@pytest.fixture(scope="module")
def logrho2():
    return LevelSetHandle.build(OperatorSpec.log_rho_k(2, 1), 0.0)


# --- level sets and boundary points ---------------------------------------------


def test_build_defaults():
    ls = LevelSetHandle.build(OperatorSpec.sigma_k_root(3, 2))
    assert ls.sigma == pytest.approx(math.sqrt(3))
    assert ls.inside(ls.anchor_array())
    arctan = LevelSetHandle.build(OperatorSpec.sum_arctan(2))
    assert arctan.sigma == pytest.approx(3 * math.pi / 4)


@pytest.mark.parametrize("op, sigma", [(OperatorSpec.sigma_k_root(2, 2), 0.0), (OperatorSpec.sigma_k_root(2, 2), -1.0), (OperatorSpec.sum_arctan(2), math.pi)])
def test_build_rejects_levels_out_of_range(op, sigma):
    with pytest.raises(ValueError):
        LevelSetHandle.build(op, sigma)


def test_build_rejects_bad_anchor():
    with pytest.raises(ValueError):
        LevelSetHandle.build(OperatorSpec.log_rho_k(2, 1), 0.0, anchor=[0.5, 0.5])


def test_boundary_point_example(logrho2):
    bp = boundary_point(logrho2, [-1.0, 0.0])
    assert np.allclose(bp.point, [0.5, 2.0], atol=1e-9)
    assert not bp.degenerate
    assert np.allclose(bp.normal, np.array([2.0, 0.5]) / math.hypot(2.0, 0.5))


def test_boundary_point_ray_stays_inside(logrho2):
    with pytest.raises(RayStaysInside):
        boundary_point(logrho2, [1.0, 1.0], t_max=1e4)


def test_boundary_point_leaves_cone():
    # sum arctan on Gamma_2: walking straight down hits lambda_2 = 0 first
    ls = LevelSetHandle.build(OperatorSpec.sum_arctan(2), 0.6 * math.pi)
    bp = boundary_point(ls, [0.0, -1.0])
    if bp.degenerate:
        with pytest.raises(OutsideCone):
            boundary_point(ls, [0.0, -1.0], strict=True)
    assert ls.op.domain.margin(bp.point) >= 0


@given(st.floats(0, 2 * math.pi))
def test_boundary_points_lie_on_level(theta):
    ls = LevelSetHandle.build(OperatorSpec.log_rho_k(2, 1), 0.0)
    d = [math.cos(theta), math.sin(theta)]
    if d[0] >= -1e-12 and d[1] >= -1e-12:
        return
    bp = boundary_point(ls, d)
    assert float(ls.op.value(bp.point)) == pytest.approx(0.0, abs=1e-8)


def test_rescaled_level_sets():
    ls = LevelSetHandle.build(OperatorSpec.sigma_k_root(3, 2), 1.0)
    other, s = ls.rescaled(3.0)
    assert s == pytest.approx(3.0)
    assert other.inside(other.anchor_array())
    with pytest.raises(ValueError):
        LevelSetHandle.build(OperatorSpec.sum_arctan(2)).rescaled(2.0)


# --- shells -----------------------------------------------------------------------


@pytest.mark.parametrize("n", [2, 3, 4])
def test_orthogonal_directions(n):
    d = orthogonal_directions(n, 64, seed=3)
    assert np.allclose(d.sum(axis=1), 0, atol=1e-12)
    assert np.allclose(np.linalg.norm(d, axis=1), 1)
    assert len(np.unique(np.round(d, 9), axis=0)) == len(d)


def test_shell_samples_on_boundary_and_sphere():
    ls = LevelSetHandle.build(OperatorSpec.sigma_k_root(3, 2))
    s = shell_samples(ls, (10.0, 100.0), count=64)
    v = s.valid
    assert v.mean() > 0.9
    r = np.linalg.norm(s.lam, axis=-1)
    assert np.allclose(r[v], np.repeat(s.radii[:, None], v.shape[1], 1)[v])
    assert np.allclose(s.value[v], ls.sigma, rtol=1e-8)


def test_shell_samples_permutation_closed():
    ls = LevelSetHandle.build(OperatorSpec.log_rho_k(3, 2))
    s = shell_samples(ls, (10.0,), count=32)
    pts = {tuple(np.round(p, 8)) for p in s.lam[0][s.valid[0]]}
    for p in list(pts)[:20]:
        assert (p[1], p[0], p[2]) in pts


# --- rank -------------------------------------------------------------------------


@pytest.mark.parametrize("n", [2, 3, 4])
def test_rank_log_rho(n):
    for k in range(1, n + 1):
        assert estimate_rank(LevelSetHandle.build(OperatorSpec.log_rho_k(n, k))).rank == k


@pytest.mark.parametrize("n", [2, 3, 4])
def test_rank_sigma_root(n):
    for k in range(1, n + 1):
        assert estimate_rank(LevelSetHandle.build(OperatorSpec.sigma_k_root(n, k))).rank == n - k + 1


def test_rank_needs_enough_directions(logrho2):
    with pytest.raises(ValueError):
        estimate_rank(logrho2, escape_directions=3)


# --- tangent cones ----------------------------------------------------------------


@pytest.mark.parametrize("mu, expected", [((2, 2), "in"), ((2, -0.1), "out"), ((5, -3), "out")])
def test_cplus_examples(logrho2, mu, expected):
    assert membership_cplus(logrho2, mu).status == expected


@pytest.mark.parametrize("mu, expected", [((1, 1), "in"), ((1, -1), "out"), ((0.01, 50), "in")])
def test_ctilde_examples(logrho2, mu, expected):
    assert membership_ctilde(logrho2, mu).status == expected


def test_ctilde_whole_space_for_trace():
    ls = LevelSetHandle.build(OperatorSpec.sigma_k_root(2, 1))
    assert membership_ctilde(ls, (-100, -100)).status == "equals_Rn"


def test_cplus_inside_ctilde(logrho2, rng):
    mus = rng.uniform(-3, 3, size=(30, 2))
    for mu in mus:
        if membership_cplus(logrho2, mu).status == "in":
            assert membership_ctilde(logrho2, mu).status == "in"


def test_cplus_permutation_invariant(rng):
    ls = LevelSetHandle.build(OperatorSpec.log_rho_k(3, 2))
    for mu in rng.uniform(-2, 4, size=(6, 3)):
        a = membership_cplus(ls, mu).status
        b = membership_cplus(ls, mu[[2, 0, 1]]).status
        assert a == b


def test_cplus_contains_level_set(logrho2, rng):
    # the level set itself lies in its tangent cone at infinity
    pts = rng.uniform(0.2, 5, size=(10, 2))
    for p in pts[logrho2.inside(pts)]:
        assert membership_cplus(logrho2, p).status == "in"


def test_cplus_margin_monotone_in_mu(logrho2):
    s = shell_samples(logrho2)
    a = cplus_margins(s, (1.0, 1.0))
    b = cplus_margins(s, (2.0, 1.5))
    v = s.valid
    assert np.all(b[v] >= a[v])


# --- dichotomy and profile --------------------------------------------------------


def test_dichotomy_interior_point(logrho2):
    w = dichotomy_witness(logrho2, (2.0, 2.0), shells=(10.0, 100.0, 1000.0))
    assert w.violations == 0
    assert w.delta > 0 and w.epsilon > 0
    assert w.radius_max == pytest.approx(1000.0)
    assert w.shell_rows


def test_dichotomy_requires_hypothesis(logrho2):
    with pytest.raises(HypothesisFailed):
        dichotomy_witness(logrho2, (1.0, -1.0))


def test_dichotomy_epsilon_shrinks_toward_boundary(logrho2):
    eps = [dichotomy_witness(logrho2, (1.0, t)).epsilon for t in (0.25, 0.1, 0.05, 0.01)]
    assert all(a > b for a, b in zip(eps, eps[1:]))


def test_refine_ladder():
    r = refine_ladder((10.0, 100.0), per_decade=4)
    assert r[0] == 10.0 and r[-1] == pytest.approx(100.0)
    assert len(r) == 5
    assert np.allclose(np.diff(np.log(r)), math.log(10) / 4)


def test_h_profile_rows(logrho2):
    prof = h_mu_profile(logrho2, (2.0, 2.0), (5.0, 10.0, 20.0, 40.0))
    assert [row["r"] for row in prof.rows] == [5.0, 10.0, 20.0, 40.0]
    assert set(prof.rows[0]) == {"r", "h", "count", "argmin"}
    assert prof.nondecreasing


def test_csv_writers(tmp_path, logrho2):
    s = shell_samples(logrho2, (10.0,), count=16)
    rows = conegeo.write_samples_csv(tmp_path / "s.csv", s, (2.0, 2.0))
    with open(tmp_path / "s.csv") as fh:
        data = list(csv.reader(fh))
    assert data[0] == ["radius", "lambda_0", "lambda_1", "nu_0", "nu_1", "m1", "m2"]
    assert len(data) == rows + 1
    prof = h_mu_profile(logrho2, (2.0, 2.0), (5.0, 10.0))
    conegeo.write_profile_csv(tmp_path / "p.csv", prof)
    with open(tmp_path / "p.csv") as fh:
        assert next(csv.reader(fh)) == ["r", "h", "count"]
