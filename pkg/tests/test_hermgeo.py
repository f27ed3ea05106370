import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hessianlab.errors import CrossCheckFailed, MetricDegenerate
from hessianlab.hermgeo import (
    MetricField,
    SpectralGrid,
    chern_data,
    christoffel,
    commutation_residuals,
    curvature,
    eigenvalues_wrt_metric,
    read_field,
    torsion,
    write_field,
    write_field_csv,
)

TWO_PI = 2 * np.pi


def analytic_data(grid):
    x1, y1, x2, y2 = (grid.coord(a) for a in range(4))
    u = grid.full(np.exp(np.sin(TWO_PI * x1) * np.cos(TWO_PI * y2)) - 1.0)
    # phi and u share variables so products are not separable and aliasing shows
    phi = grid.full(0.3 * np.exp(np.cos(TWO_PI * x1)) * np.sin(TWO_PI * (y1 + y2)))
    return u, MetricField.conformal(grid, phi)


# --- grid -------------------------------------------------------------------------


def test_grid_validation():
    with pytest.raises(ValueError):
        SpectralGrid(2, 6)
    with pytest.raises(ValueError):
        SpectralGrid(0, 8)
    g = SpectralGrid(2, 8)
    assert g.shape == (8, 8, 8, 8) and g.size == 8**4
    assert g == SpectralGrid(2, 8) and hash(g) == hash(SpectralGrid(2, 8))


@pytest.mark.parametrize("kx, ky", [(1, 0), (0, 2), (3, -1)])
def test_wirtinger_derivatives_of_modes(grid2_16, kx, ky):
    g = grid2_16
    x, y = g.x(0), g.y(0)
    e = g.full(np.exp(1j * TWO_PI * (kx * x + ky * y))).astype(complex)
    dz = g.d(e, 0)
    dzb = g.d(e, 0, conj=True)
    assert np.allclose(dz, 0.5 * TWO_PI * (1j * kx + ky) * e, atol=1e-10)
    assert np.allclose(dzb, 0.5 * TWO_PI * (1j * kx - ky) * e, atol=1e-10)
    assert np.allclose(g.d(e, 1), 0, atol=1e-10)


def test_ddbar_example(grid2_16):
    g = grid2_16
    eps = 0.1
    u = g.full(eps * np.cos(TWO_PI * g.x(0)))
    dd = g.ddbar(u)
    assert np.allclose(dd[..., 0, 0], -eps * np.pi**2 * np.cos(TWO_PI * g.x(0)))
    assert np.allclose(dd[..., 1, 1], 0, atol=1e-12)
    assert np.allclose(dd[..., 0, 1], 0, atol=1e-12)


@given(st.integers(0, 10_000))
def test_ddbar_matches_stacked_first_derivatives(seed):
    g = SpectralGrid(2, 8)
    u = g.filter_real(np.random.default_rng(seed).normal(size=g.shape))
    dd = g.ddbar(u)
    ref = g.grad(g.grad(u.astype(complex), conj=True), conj=False)  # [..., i, j] = d_i d_jbar
    assert np.allclose(dd, ref, atol=1e-10)
    assert np.allclose(dd, np.conj(np.swapaxes(dd, -1, -2)))
    assert np.allclose(g.dz_real(u), g.grad(u.astype(complex)), atol=1e-10)


def test_derivatives_commute(grid2_16, rng):
    g = grid2_16
    f = g.filter_real(rng.normal(size=g.shape)).astype(complex)
    a = g.d(g.d(f, 0), 1, conj=True)
    b = g.d(g.d(f, 1, conj=True), 0)
    assert np.allclose(a, b, atol=1e-12)


def test_filter_real(grid2_16, rng):
    g = grid2_16
    u = g.filter_real(rng.normal(size=g.shape) + 3.0)
    assert abs(u.mean()) < 1e-12
    assert np.allclose(g.filter_real(u), u)
    assert g.filter_real(2.0).shape == g.shape


def test_laplacian_symbol(grid2_16):
    g = grid2_16
    u = g.full(np.cos(TWO_PI * (g.x(0) + g.y(1))))
    coef = np.array([[2.0, 0.3 + 0.1j], [0.3 - 0.1j, 1.0]])
    direct = np.einsum("ij,...ij->...", coef, g.ddbar(u)).real
    spec = g.irfft(g.laplacian_symbol_half(coef) * g.rfft(u))
    assert np.allclose(direct, spec, atol=1e-10)


# --- metrics and eigenvalues --------------------------------------------------------


def test_eigenvalues_wrt_metric_example():
    g = SpectralGrid(1, 4)
    G = np.broadcast_to(np.diag([2.0, 1.0]).astype(complex), g.shape + (2, 2)).copy()
    metric = MetricField(SpectralGrid(2, 4), np.broadcast_to(G[0, 0], (4,) * 4 + (2, 2)).copy())
    X = np.broadcast_to(np.diag([3.0, 1.0]).astype(complex), (4,) * 4 + (2, 2))
    lam = eigenvalues_wrt_metric(X, metric)
    assert np.allclose(lam, [1.5, 1.0])


def test_metric_validation():
    grid = SpectralGrid(2, 4)
    bad = np.broadcast_to(np.diag([1.0, -1.0]).astype(complex), grid.shape + (2, 2)).copy()
    with pytest.raises(MetricDegenerate):
        MetricField(grid, bad)
    skew = np.broadcast_to(np.array([[1, 1], [0, 1]], dtype=complex), grid.shape + (2, 2)).copy()
    with pytest.raises(MetricDegenerate):
        MetricField(grid, skew)
    with pytest.raises(ValueError):
        MetricField(grid, np.zeros((4, 4, 2, 2), complex))


def test_general_metric_eigenvalues_match_scipy(rng):
    import scipy.linalg

    grid = SpectralGrid(2, 4)
    A = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    G0 = A @ A.conj().T + np.eye(2)
    X0 = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    X0 = X0 + X0.conj().T
    metric = MetricField(grid, np.broadcast_to(G0, grid.shape + (2, 2)).copy())
    lam = eigenvalues_wrt_metric(np.broadcast_to(X0, grid.shape + (2, 2)), metric)
    ref = scipy.linalg.eigh(X0, G0, eigvals_only=True)[::-1]
    assert np.allclose(lam[0, 0, 0, 0], ref)


# --- Chern connection ---------------------------------------------------------------


def test_flat_connection_vanishes(grid2_16):
    flat = MetricField.flat(grid2_16)
    assert np.allclose(christoffel(flat), 0)
    assert np.allclose(torsion(flat), 0)


def test_conformal_fast_path_matches_general(conformal2_16):
    general = MetricField(conformal2_16.grid, conformal2_16.g.copy())
    assert np.allclose(christoffel(conformal2_16), christoffel(general), atol=1e-12)
    T = torsion(conformal2_16)
    assert np.allclose(T, -np.swapaxes(T, -3, -2))
    assert np.abs(T).max() > 0.1


def test_curvature_cross_check(conformal2_16):
    data = chern_data(conformal2_16)
    assert data.curvature_residual < 1e-10
    with pytest.raises(CrossCheckFailed):
        curvature(conformal2_16, check=True, rtol=1e-30)


def test_commutation_trig_data(conformal2_16):
    g = conformal2_16.grid
    u = g.full(0.1 * np.sin(TWO_PI * g.x(0)) * np.cos(TWO_PI * g.y(1)) + 0.05 * np.cos(TWO_PI * (g.x(1) + g.y(0))))
    res = commutation_residuals(u, conformal2_16)
    assert set(res) == {"ijk_minus_kji", "ijk_minus_ikj", "ijkl_minus_ijlk", "ijkl_minus_klij"}
    assert max(res.values()) < 1e-10


def test_commutation_curvature_slot_order(conformal2_16):
    # swapping the curvature slots in the third identity is only valid for Kaehler metrics
    g = conformal2_16.grid
    u = g.full(0.1 * np.sin(TWO_PI * g.x(0)) * np.cos(TWO_PI * g.y(1)))
    assert commutation_residuals(u, conformal2_16)["ijkl_minus_ijlk"] < 1e-10
    assert commutation_residuals(u, conformal2_16, kahler_form=True)["ijkl_minus_ijlk"] > 1e-2
    assert commutation_residuals(u, MetricField.flat(g), kahler_form=True)["ijkl_minus_ijlk"] < 1e-10


def test_commutation_refinement_on_analytic_data():
    coarse = commutation_residuals(*analytic_data(SpectralGrid(2, 8)))
    fine = commutation_residuals(*analytic_data(SpectralGrid(2, 16)))
    assert max(fine.values()) * 10 <= max(coarse.values())
    for key in coarse:
        assert fine[key] <= max(coarse[key] / 10, 1e-11)


# --- serialization ------------------------------------------------------------------


def test_field_roundtrip(tmp_path, conformal2_16):
    write_field(tmp_path / "g.bin", conformal2_16.g)
    back = read_field(tmp_path / "g.bin")
    assert np.array_equal(back, conformal2_16.g)
    real = np.arange(16.0).reshape(4, 4)
    write_field(tmp_path / "r.bin", real)
    assert np.array_equal(read_field(tmp_path / "r.bin"), real)


def test_field_csv(tmp_path):
    grid = SpectralGrid(1, 4)
    f = np.ones(grid.shape + (1, 1), dtype=complex)
    write_field_csv(tmp_path / "f.csv", f, grid)
    with open(tmp_path / "f.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["i0", "i1", "re00", "im00"]
    assert len(rows) == 17
