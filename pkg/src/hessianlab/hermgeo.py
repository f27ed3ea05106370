"""Hermitian geometry on the periodic complex torus C^n / Z^{2n}.

Fields are numpy arrays whose leading 2n axes are the grid, ordered
(x_1, y_1, x_2, y_2, ...), with z_i = x_i + sqrt(-1) y_i. Tensor indices
trail the grid axes. A (1,1)-form X is stored as X[..., i, j] = X_{i jbar},
so Hermitian forms are Hermitian matrices. Index conventions for the Chern
data:

* ``gamma[..., i, j, k]`` is Gamma_{ij}^k
* ``torsion[..., i, j, k]`` is T_{ij}^k
* ``curv[..., i, j, k, l]`` is R_{i jbar k lbar}

Derivatives are pseudospectral. The Nyquist mode is dropped from every first
derivative and mixed derivatives are products of first-derivative symbols,
so partial derivatives commute exactly on the grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .errors import CrossCheckFailed, MetricDegenerate


def _einsum(*args):
    return np.einsum(*args, optimize=True)


class SpectralGrid:
    """Uniform grid with ``m`` points per real axis on the unit torus of complex dimension ``n``."""

    def __init__(self, n: int, m: int):
        if n < 1:
            raise ValueError("n must be positive")
        if m < 4 or m & (m - 1):
            raise ValueError("m must be a power of two >= 4")
        self.n = int(n)
        self.m = int(m)
        self.shape = (self.m,) * (2 * self.n)
        self.axes = tuple(range(2 * self.n))

    def __repr__(self):
        return f"SpectralGrid(n={self.n}, m={self.m})"

    def __eq__(self, other):
        return isinstance(other, SpectralGrid) and (self.n, self.m) == (other.n, other.m)

    def __hash__(self):
        return hash((self.n, self.m))

    @property
    def size(self) -> int:
        return self.m ** (2 * self.n)

    def coord(self, axis: int) -> np.ndarray:
        """Coordinate along a real axis, shaped to broadcast over the grid."""
        shape = [1] * (2 * self.n)
        shape[axis] = self.m
        return (np.arange(self.m) / self.m).reshape(shape)

    def x(self, i: int) -> np.ndarray:
        return self.coord(2 * i)

    def y(self, i: int) -> np.ndarray:
        return self.coord(2 * i + 1)

    def full(self, arr) -> np.ndarray:
        return np.broadcast_to(arr, self.shape).copy()

    # symbols -----------------------------------------------------------
    def _k(self, axis: int, half: bool = False) -> np.ndarray:
        m = self.m
        if half and axis == 2 * self.n - 1:
            k = 2 * np.pi * np.arange(m // 2 + 1, dtype=float)
        else:
            k = 2 * np.pi * sfft.fftfreq(m, 1.0 / m)
        k[np.abs(k) == np.pi * m] = 0.0
        shape = [1] * (2 * self.n)
        shape[axis] = k.size
        return k.reshape(shape)

    @cached_property
    def _symbols(self):
        # d/dz_i -> (i kx + ky)/2, d/dzbar_i -> (i kx - ky)/2
        dz, dzb = [], []
        for i in range(self.n):
            kx, ky = self._k(2 * i), self._k(2 * i + 1)
            dz.append(0.5 * (1j * kx + ky))
            dzb.append(0.5 * (1j * kx - ky))
        return dz, dzb

    @cached_property
    def _half_k(self):
        return [self._k(a, half=True) for a in range(2 * self.n)]

    def symbol(self, i: int, conj: bool = False) -> np.ndarray:
        dz, dzb = self._symbols
        return dzb[i] if conj else dz[i]

    # transforms --------------------------------------------------------
    def fft(self, field):
        return sfft.fftn(field, axes=self.axes)

    def ifft(self, spec):
        return sfft.ifftn(spec, axes=self.axes)

    def _bcast(self, sym, extra: int):
        return sym.reshape(sym.shape + (1,) * extra)

    def d(self, field, i: int, conj: bool = False) -> np.ndarray:
        """d/dz_i (or d/dzbar_i with ``conj``) of a field with trailing tensor axes."""
        field = np.asarray(field)
        extra = field.ndim - 2 * self.n
        return self.ifft(self._bcast(self.symbol(i, conj), extra) * self.fft(field))

    def grad(self, field, conj: bool = False) -> np.ndarray:
        """Stack of d_i (or d_ibar) along a new axis right after the grid axes."""
        field = np.asarray(field)
        extra = field.ndim - 2 * self.n
        spec = self.fft(field)
        out = [self.ifft(self._bcast(self.symbol(i, conj), extra) * spec) for i in range(self.n)]
        return np.stack(out, axis=2 * self.n)

    def ddbar(self, u) -> np.ndarray:
        """Hermitian field d_i d_jbar u for a real scalar field u."""
        u = np.asarray(u, dtype=float)
        n = self.n
        kh = self._half_k
        spec = sfft.rfftn(u, axes=self.axes)
        out = np.empty(self.shape + (n, n), dtype=complex)
        for i in range(n):
            kxi, kyi = kh[2 * i], kh[2 * i + 1]
            lap = -0.25 * (kxi * kxi + kyi * kyi)
            out[..., i, i] = sfft.irfftn(lap * spec, s=self.shape, axes=self.axes)
            for j in range(i + 1, n):
                kxj, kyj = kh[2 * j], kh[2 * j + 1]
                re = sfft.irfftn(-0.25 * (kxi * kxj + kyi * kyj) * spec, s=self.shape, axes=self.axes)
                im = sfft.irfftn(-0.25 * (kxi * kyj - kyi * kxj) * spec, s=self.shape, axes=self.axes)
                out[..., i, j] = re + 1j * im
                out[..., j, i] = re - 1j * im
        return out

    def ddbar_parts(self):
        """Real symbols (i, j, part, symbol) whose sum reproduces d_i d_jbar.

        For i == j the operator is real; for i < j, part 0 is the real and part 1
        the imaginary component of d_i d_jbar.
        """
        kh = self._half_k
        out = []
        for i in range(self.n):
            kxi, kyi = kh[2 * i], kh[2 * i + 1]
            out.append((i, i, 0, -0.25 * (kxi * kxi + kyi * kyi)))
            for j in range(i + 1, self.n):
                kxj, kyj = kh[2 * j], kh[2 * j + 1]
                out.append((i, j, 0, -0.25 * (kxi * kxj + kyi * kyj)))
                out.append((i, j, 1, -0.25 * (kxi * kyj - kyi * kxj)))
        return out

    def rfft(self, u):
        return sfft.rfftn(np.asarray(u, dtype=float), axes=self.axes)

    def irfft(self, spec):
        return sfft.irfftn(spec, s=self.shape, axes=self.axes)

    def dz_real(self, u) -> np.ndarray:
        """Stack of d_i u for a real scalar field (complex output, shape grid + (n,))."""
        u = np.asarray(u, dtype=float)
        kh = self._half_k
        spec = sfft.rfftn(u, axes=self.axes)
        out = np.empty(self.shape + (self.n,), dtype=complex)
        for i in range(self.n):
            dx = sfft.irfftn(1j * kh[2 * i] * spec, s=self.shape, axes=self.axes)
            dy = sfft.irfftn(1j * kh[2 * i + 1] * spec, s=self.shape, axes=self.axes)
            out[..., i] = 0.5 * (dx - 1j * dy)
        return out

    def laplacian_symbol_half(self, coef: np.ndarray) -> np.ndarray:
        """Real symbol of sum_ij coef[i, j] d_i d_jbar on the rfft half grid.

        ``coef`` is a constant Hermitian matrix; the operator maps real fields
        to real fields when ``coef`` is Hermitian.
        """
        kh = self._half_k
        n = self.n
        sym = np.zeros(np.broadcast_shapes(*[k.shape for k in kh]))
        for i in range(n):
            for j in range(n):
                kxi, kyi, kxj, kyj = kh[2 * i], kh[2 * i + 1], kh[2 * j], kh[2 * j + 1]
                s_re = -0.25 * (kxi * kxj + kyi * kyj)
                s_im = -0.25 * (kxi * kyj - kyi * kxj)
                c = coef[i, j]
                # imaginary parts cancel between (i, j) and (j, i)
                sym = sym + (c.real * s_re - c.imag * s_im)
        return sym

    def null_mask_half(self) -> np.ndarray:
        """True on rfft modes annihilated by every first derivative."""
        kh = self._half_k
        mask = np.ones(np.broadcast_shapes(*[k.shape for k in kh]), dtype=bool)
        for k in kh:
            mask = mask & (k == 0)
        return mask

    def filter_real(self, u) -> np.ndarray:
        """Remove the mean and the derivative-null modes from a real field."""
        spec = sfft.rfftn(self.full(np.asarray(u, dtype=float)), axes=self.axes)
        spec[self.null_mask_half()] = 0.0
        return sfft.irfftn(spec, s=self.shape, axes=self.axes)


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricField:
    """Hermitian metric g_{i jbar} on a grid.

    ``conformal_factor`` holds phi when g = e^phi delta (phi = 0 for the flat
    metric) and None for a general metric.
    """

    grid: SpectralGrid
    g: np.ndarray
    conformal_factor: np.ndarray | None = None

    def __post_init__(self):
        n = self.grid.n
        if self.g.shape != self.grid.shape + (n, n):
            raise ValueError("metric shape does not match grid")
        if np.max(np.abs(self.g - np.conj(np.swapaxes(self.g, -1, -2)))) > 1e-12 * (1 + np.max(np.abs(self.g))):
            raise MetricDegenerate("metric is not Hermitian")
        if self.conformal_factor is None:
            try:
                np.linalg.cholesky(self.g)
            except np.linalg.LinAlgError as exc:
                raise MetricDegenerate("metric is not positive definite") from exc
            lo = np.linalg.eigvalsh(self.g).min()
        else:
            lo = float(np.exp(self.conformal_factor).min())
        if not lo > 1e-10:
            raise MetricDegenerate(f"metric eigenvalue {lo:g} below 1e-10")

    @classmethod
    def flat(cls, grid: SpectralGrid) -> "MetricField":
        g = np.broadcast_to(np.eye(grid.n, dtype=complex), grid.shape + (grid.n, grid.n)).copy()
        return cls(grid, g, np.zeros(grid.shape))

    @classmethod
    def conformal(cls, grid: SpectralGrid, phi) -> "MetricField":
        phi = grid.full(np.asarray(phi, dtype=float))
        g = np.exp(phi)[..., None, None] * np.eye(grid.n)
        return cls(grid, g.astype(complex), phi)

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def is_conformal(self) -> bool:
        return self.conformal_factor is not None

    @property
    def is_flat(self) -> bool:
        return self.is_conformal and not np.any(self.conformal_factor)

    @cached_property
    def g_inv(self) -> np.ndarray:
        """g^{k lbar} stored as g_inv[..., k, l]; sum_l g^{k lbar} g_{j lbar} = delta_kj."""
        if self.is_conformal:
            return np.exp(-self.conformal_factor)[..., None, None] * np.eye(self.n, dtype=complex)
        return np.swapaxes(np.linalg.inv(self.g), -1, -2)

    @cached_property
    def whitener(self) -> np.ndarray:
        """L^{-1} with g = L L^*, so that L^{-1} X L^{-*} has the eigenvalues of X wrt g."""
        if self.is_conformal:
            return np.exp(-0.5 * self.conformal_factor)[..., None, None] * np.eye(self.n, dtype=complex)
        try:
            return np.linalg.inv(np.linalg.cholesky(self.g))
        except np.linalg.LinAlgError as exc:
            raise MetricDegenerate("whitening failed") from exc

    def whiten(self, X) -> np.ndarray:
        if self.is_conformal:
            return np.exp(-self.conformal_factor)[..., None, None] * X
        W = self.whitener
        return W @ X @ np.conj(np.swapaxes(W, -1, -2))

    def trace(self, X) -> np.ndarray:
        """tr_g X = g^{i jbar} X_{i jbar}."""
        return _einsum("...ij,...ij->...", self.g_inv, X)

    def norm2_10(self, zeta) -> np.ndarray:
        """|zeta|_g^2 = g^{i jbar} zeta_i conj(zeta_j) for a (1,0)-covector field."""
        return _einsum("...ij,...i,...j->...", self.g_inv, zeta, np.conj(zeta)).real


# ---------------------------------------------------------------------------
# Chern connection


@dataclass
class ChernData:
    gamma: np.ndarray
    torsion: np.ndarray
    curvature: np.ndarray
    curvature_residual: float


def christoffel(metric: MetricField) -> np.ndarray:
    """Gamma_{ij}^k = g^{k lbar} d_i g_{j lbar}."""
    grid = metric.grid
    if metric.is_conformal:
        # g = e^phi delta gives Gamma_{ij}^k = delta_jk d_i phi
        dphi = grid.grad(metric.conformal_factor.astype(complex))
        return dphi[..., :, None, None] * np.eye(metric.n)[None, :, :]
    dg = grid.grad(metric.g)  # [..., i, j, l] = d_i g_{j lbar}
    return _einsum("...kl,...ijl->...ijk", metric.g_inv, dg)


def torsion_from(gamma: np.ndarray) -> np.ndarray:
    return gamma - np.swapaxes(gamma, -3, -2)


def torsion(metric: MetricField) -> np.ndarray:
    """T_{ij}^k = Gamma_{ij}^k - Gamma_{ji}^k."""
    return torsion_from(christoffel(metric))


def curvature(metric: MetricField, gamma: np.ndarray | None = None, check: bool = True, rtol: float = 1e-6):
    """Chern curvature R_{i jbar k lbar} and the cross-check residual.

    First form: -g_{m lbar} d_jbar Gamma_{ik}^m. Second form:
    -d_i d_jbar g_{k lbar} + g^{p qbar} d_i g_{k qbar} d_jbar g_{p lbar}.
    Raises `CrossCheckFailed` when they differ by more than ``rtol * max|R|``.
    """
    grid = metric.grid
    if gamma is None:
        gamma = christoffel(metric)
    dbar_gamma = grid.grad(gamma, conj=True)  # [..., j, i, k, m]
    r1 = -_einsum("...ml,...jikm->...ijkl", metric.g, dbar_gamma)
    del dbar_gamma
    dg = grid.grad(metric.g)  # [..., i, k, q] = d_i g_{k qbar}
    dbg = grid.grad(metric.g, conj=True)  # [..., j, p, l] = d_jbar g_{p lbar}
    ddg = grid.grad(dbg, conj=False)  # [..., i, j, k, l] = d_i d_jbar g_{k lbar}
    r2 = -ddg + _einsum("...pq,...ikq,...jpl->...ijkl", metric.g_inv, dg, dbg)
    scale = max(float(np.max(np.abs(r1))), float(np.max(np.abs(r2))))
    resid = float(np.max(np.abs(r1 - r2)))
    if check and resid > rtol * scale and resid > 1e-12:
        raise CrossCheckFailed(f"curvature expressions differ by {resid:.3g} (|R| = {scale:.3g})")
    return r1, resid


def chern_data(metric: MetricField, check: bool = True) -> ChernData:
    gamma = christoffel(metric)
    curv, resid = curvature(metric, gamma, check=check)
    return ChernData(gamma, torsion_from(gamma), curv, resid)


# ---------------------------------------------------------------------------
# eigenvalues of (1,1)-forms


def hermitian_part(X) -> np.ndarray:
    return 0.5 * (X + np.conj(np.swapaxes(X, -1, -2)))


def eigvals_hermitian(H) -> np.ndarray:
    """Eigenvalues of a batch of Hermitian matrices, sorted descending."""
    n = H.shape[-1]
    if n == 2:
        a = H[..., 0, 0].real
        d = H[..., 1, 1].real
        b = np.abs(H[..., 0, 1])
        mid = 0.5 * (a + d)
        rad = np.hypot(0.5 * (a - d), b)
        return np.stack([mid + rad, mid - rad], axis=-1)
    return np.linalg.eigvalsh(H)[..., ::-1]


def eigenvalues_wrt_metric(X, metric: MetricField) -> np.ndarray:
    """lambda(X) with respect to g, per grid point, sorted descending."""
    return eigvals_hermitian(hermitian_part(metric.whiten(np.asarray(X))))


# ---------------------------------------------------------------------------
# commutation formulas for covariant derivatives


def commutation_residuals(u, metric: MetricField, chern: ChernData | None = None, relative: bool = False, kahler_form: bool = False) -> dict:
    """Max-norm residuals of the four commutation identities for a real field u.

    With the covariant derivatives
    u_{i jbar} = d_jbar d_i u, u_{i jbar k} = d_k u_{i jbar} - Gamma_{ki}^l u_{l jbar},
    u_{i jbar k lbar} = d_lbar u_{i jbar k} - conj(Gamma_{lj}^m) u_{i mbar k},
    the identities checked are

    1. u_{i jbar k} - u_{k jbar i} = T_{ik}^l u_{l jbar}
    2. u_{i jbar k} - u_{i k jbar} = -g^{l mbar} R_{k jbar i mbar} u_l
    3. u_{i jbar k lbar} - u_{i jbar lbar k} = g^{p qbar} R_{k lbar i qbar} u_{p jbar} - g^{p qbar} R_{k lbar p jbar} u_{i qbar}
    4. u_{i jbar k lbar} - u_{k lbar i jbar} = g^{p qbar}(R_{k lbar i qbar} u_{p jbar} - R_{i jbar k qbar} u_{p lbar})
       + T_{ik}^p u_{p jbar lbar} + conj(T_{jl}^q) u_{i qbar k} - T_{ik}^p conj(T_{jl}^q) u_{p qbar}

    In identity 3 the curvature in the second term carries its form indices
    (k, lbar) first, as in the first term; writing it as R_{p lbar k jbar}
    agrees only when the curvature has the Kaehler symmetry; ``kahler_form``
    switches identity 3 to that variant for comparison.

    With ``relative`` each residual is divided by the max norm of its left side.
    """
    grid = metric.grid
    if chern is None:
        chern = chern_data(metric, check=False)
    G, T, R = chern.gamma, chern.torsion, chern.curvature
    Gb = np.conj(G)
    Tb = np.conj(T)
    ginv = metric.g_inv
    u = np.asarray(u, dtype=float)
    u1 = grid.dz_real(u)  # u_l
    u2 = grid.ddbar(u)  # u_{i jbar}
    out = {}

    def report(key, lhs, rhs):
        res = float(np.max(np.abs(lhs - rhs)))
        if relative:
            res /= max(float(np.max(np.abs(lhs))), 1e-300)
        out[key] = res

    # u_{i jbar k}: [..., i, j, k]
    du2 = np.moveaxis(grid.grad(u2), 2 * grid.n, -1)  # d_k u_{i jbar}
    u3 = du2 - _einsum("...kil,...lj->...ijk", G, u2)
    lhs = u3 - _einsum("...kji->...ijk", u3)
    rhs = _einsum("...ikl,...lj->...ijk", T, u2)
    report("ijk_minus_kji", lhs, rhs)

    # u_{i k jbar} = d_jbar (d_k u_i - Gamma_{ki}^l u_l): [..., i, k, j]
    uik = np.moveaxis(grid.grad(u1.astype(complex)), 2 * grid.n, -1)  # [..., i, k] = d_k u_i
    uik = uik - _einsum("...kil,...l->...ik", G, u1)
    uikj = np.moveaxis(grid.grad(uik, conj=True), 2 * grid.n, -1)  # [..., i, k, j]
    del uik
    lhs = u3 - _einsum("...ikj->...ijk", uikj)
    del uikj
    rhs = -_einsum("...lm,...kjim,...l->...ijk", ginv, R, u1)
    report("ijk_minus_ikj", lhs, rhs)

    # u_{i jbar k lbar}: [..., i, j, k, l]
    du3 = np.moveaxis(grid.grad(u3, conj=True), 2 * grid.n, -1)
    u4 = du3 - _einsum("...ljm,...imk->...ijkl", Gb, u3)
    del du3
    # u_{i jbar lbar} = d_lbar u_{i jbar} - conj(Gamma_{lj}^m) u_{i mbar}: [..., i, j, l]
    du2b = np.moveaxis(grid.grad(u2, conj=True), 2 * grid.n, -1)
    u3b = du2b - _einsum("...ljm,...im->...ijl", Gb, u2)
    del du2b
    # u_{i jbar lbar k} = d_k u_{i jbar lbar} - Gamma_{ki}^p u_{p jbar lbar}: [..., i, j, l, k]
    du3b = np.moveaxis(grid.grad(u3b), 2 * grid.n, -1)
    u4b = du3b - _einsum("...kip,...pjl->...ijlk", G, u3b)
    del du3b
    ric_a = _einsum("...pq,...kliq,...pj->...ijkl", ginv, R, u2)
    lhs = u4 - _einsum("...ijlk->...ijkl", u4b)
    del u4b
    second = "...pq,...plkj,...iq->...ijkl" if kahler_form else "...pq,...klpj,...iq->...ijkl"
    rhs = ric_a - _einsum(second, ginv, R, u2)
    report("ijkl_minus_ijlk", lhs, rhs)

    lhs = u4 - _einsum("...klij->...ijkl", u4)
    rhs = (
        ric_a
        - _einsum("...pq,...ijkq,...pl->...ijkl", ginv, R, u2)
        + _einsum("...ikp,...pjl->...ijkl", T, u3b)
        + _einsum("...jlq,...iqk->...ijkl", Tb, u3)
        - _einsum("...ikp,...jlq,...pq->...ijkl", T, Tb, u2)
    )
    report("ijkl_minus_klij", lhs, rhs)
    return out


# ---------------------------------------------------------------------------
# field serialization


def write_field(path, field) -> None:
    """Write a field as little-endian float64 with a ``.json`` shape sidecar.

    Layout: row-major over grid axes, tensor entries row-major, each entry as
    (real, imaginary).
    """
    field = np.asarray(field)
    pair = np.stack([field.real, np.imag(field)], axis=-1).astype("<f8")
    pair.tofile(path)
    with open(str(path) + ".json", "w") as fh:
        json.dump({"shape": list(field.shape), "layout": "row-major, real then imaginary", "dtype": "<f8"}, fh)


def write_field_csv(path, field, grid: SpectralGrid) -> None:
    """One row per grid point: multi-index, then (re, im) per tensor entry."""
    field = np.asarray(field)
    tail = field.shape[len(grid.shape) :]
    entries = list(np.ndindex(*tail)) if tail else [()]
    flat = field.reshape(grid.size, -1)
    idx = np.indices(grid.shape).reshape(len(grid.shape), -1).T
    header = [f"i{a}" for a in range(len(grid.shape))]
    for e in entries:
        tag = "".join(str(x) for x in e)
        header += [f"re{tag}", f"im{tag}"]
    parts = np.empty((grid.size, 2 * flat.shape[1]))
    parts[:, 0::2] = flat.real
    parts[:, 1::2] = np.imag(flat)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row_i, row_v in zip(idx, parts):
            fh.write(",".join(str(int(v)) for v in row_i) + "," + ",".join(repr(float(v)) for v in row_v) + "\n")


def read_field(path) -> np.ndarray:
    with open(str(path) + ".json") as fh:
        meta = json.load(fh)
    shape = tuple(meta["shape"])
    pair = np.fromfile(path, dtype="<f8").reshape(shape + (2,))
    if not np.any(pair[..., 1]):
        return pair[..., 0].copy()
    return pair[..., 0] + 1j * pair[..., 1]
