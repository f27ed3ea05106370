"""Continuity-method Newton solver for f(lambda(chi[u] + sqrt(-1) ddbar u)) = psi + b.

The unknowns are a real periodic field u, normalised to mean zero during the
iteration, and a constant b fixed at every iterate as the mean of the
residual. Newton corrections solve the linearised equation with restarted
GMRES, preconditioned by the exact inverse of the constant-coefficient
operator obtained by averaging F^{i jbar} over the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import ContinuityStalled, NewtonDiverged, NoAdmissibleStart, NotAdmissible
from .hermgeo import MetricField, SpectralGrid, _einsum, eigvals_hermitian, hermitian_part, torsion
from .symfun import OperatorSpec


# ---------------------------------------------------------------------------
# chi


@dataclass(frozen=True, eq=False)
class ChiSpec:
    """The form chi in g = chi[u] + sqrt(-1) ddbar u.

    ``constant`` holds one Hermitian matrix, ``zdependent`` a Hermitian field,
    ``gauduchon`` the form-type Monge-Ampere data (omega_0, c), in which chi
    depends linearly on the gradient of u.
    """

    kind: str
    value: np.ndarray | None = None
    omega0: MetricField | None = None
    c: float = 1.0

    @classmethod
    def constant(cls, X0) -> "ChiSpec":
        X0 = np.asarray(X0, dtype=complex)
        if np.max(np.abs(X0 - X0.conj().T)) > 1e-13 * (1 + np.max(np.abs(X0))):
            raise ValueError("constant chi must be Hermitian")
        return cls("constant", X0)

    @classmethod
    def zdependent(cls, X) -> "ChiSpec":
        X = np.asarray(X, dtype=complex)
        if np.max(np.abs(X - np.conj(np.swapaxes(X, -1, -2)))) > 1e-13 * (1 + np.max(np.abs(X))):
            raise ValueError("chi field must be Hermitian")
        return cls("zdependent", X)

    @classmethod
    def gauduchon(cls, omega0: MetricField, c: float = 1.0) -> "ChiSpec":
        return cls("gauduchon", None, omega0, float(c))

    @property
    def depends_on_gradient(self) -> bool:
        return self.kind == "gauduchon"


class GauduchonChi:
    """chi for the form-type Monge-Ampere equation on a conformally flat torus.

    chi~ = chi~_0 + c E~(du), chi~_0 = (n-1) (det A / det g) g A^{-1} g with A the
    matrix of omega_0, and chi = (tr_g chi~ / (n-1)) g - chi~. E~ is linear in
    (zeta, conj(zeta)) = (du, dbar u):

        E~_{i ibar} = 1/2 sum_{p != i, l != i} (zeta_p conj(T_{pl}^l) + conj(zeta_p) T_{pl}^l)
        E~_{i jbar} = -1/2 ( sum_{l != i} (zeta_i conj(T_{jl}^l) + zeta_l conj(T_{lj}^i))
                           + sum_{l != j} (conj(zeta_j) T_{il}^l + conj(zeta_l) T_{li}^j) ),  i != j

    At n = 2 the (n-2)-fold wedge of omega is empty, so E~ = 0 and chi = omega_0.
    """

    def __init__(self, metric: MetricField, omega0: MetricField, c: float):
        if not metric.is_conformal:
            raise ValueError("the Gauduchon chi is implemented for conformally flat metrics")
        if omega0.grid != metric.grid:
            raise ValueError("omega_0 and metric live on different grids")
        self.metric = metric
        self.omega0 = omega0
        self.c = float(c)
        self.n = metric.n

    @cached_property
    def chi_tilde0(self) -> np.ndarray:
        n = self.n
        g, A = self.metric.g, self.omega0.g
        ratio = (np.linalg.det(A) / np.linalg.det(g)).real
        return (n - 1) * ratio[..., None, None] * (g @ np.linalg.inv(A) @ g)

    @cached_property
    def coefficients(self):
        """(C, D) with E~_{i jbar} = sum_p zeta_p C[p, i, j] + conj(zeta_p) D[p, i, j]."""
        n = self.n
        shape = self.metric.grid.shape + (n, n, n)
        C = np.zeros(shape, dtype=complex)
        D = np.zeros(shape, dtype=complex)
        if n == 2:
            return C, D
        T = torsion(self.metric)
        Tb = np.conj(T)
        for i in range(n):
            for p in range(n):
                if p == i:
                    continue
                for l in range(n):
                    if l == i:
                        continue
                    C[..., p, i, i] += 0.5 * Tb[..., p, l, l]
                    D[..., p, i, i] += 0.5 * T[..., p, l, l]
            for j in range(n):
                if j == i:
                    continue
                for l in range(n):
                    if l != i:
                        C[..., i, i, j] -= 0.5 * Tb[..., j, l, l]
                        C[..., l, i, j] -= 0.5 * Tb[..., l, j, i]
                    if l != j:
                        D[..., j, i, j] -= 0.5 * T[..., i, l, l]
                        D[..., l, i, j] -= 0.5 * T[..., l, i, j]
        return C, D

    def e_tilde(self, zeta) -> np.ndarray:
        C, D = self.coefficients
        return _einsum("...p,...pij->...ij", zeta, C) + _einsum("...p,...pij->...ij", np.conj(zeta), D)

    def chi_tilde(self, zeta) -> np.ndarray:
        return self.chi_tilde0 + self.c * self.e_tilde(zeta)

    def from_tilde(self, Xt) -> np.ndarray:
        """chi = (tr_g chi~ / (n-1)) g - chi~."""
        tr = self.metric.trace(Xt)
        return (tr / (self.n - 1))[..., None, None] * self.metric.g - Xt

    def chi(self, zeta) -> np.ndarray:
        return self.from_tilde(self.chi_tilde(zeta))

    def dchi(self, dzeta) -> np.ndarray:
        """Derivative of chi in the gradient slot along dzeta (chi is affine in zeta)."""
        return self.from_tilde(self.c * self.e_tilde(dzeta))


def build_gauduchon_chi(omega0: MetricField, metric: MetricField, u, c: float = 1.0) -> np.ndarray:
    """chi[u] for the form-type Monge-Ampere equation, as a Hermitian field."""
    gchi = GauduchonChi(metric, omega0, c)
    return hermitian_part(gchi.chi(metric.grid.dz_real(u)))


# ---------------------------------------------------------------------------
# problems


@dataclass(eq=False)
class ProblemSpec:
    grid: SpectralGrid
    metric: MetricField
    op: OperatorSpec
    chi: ChiSpec
    psi: np.ndarray | None = None
    normalization: str = "mean_zero"

    def __post_init__(self):
        if self.op.n != self.grid.n or self.metric.grid != self.grid:
            raise ValueError("operator, metric and grid dimensions disagree")
        if self.normalization not in ("mean_zero", "sup_zero"):
            raise ValueError(f"unknown normalization {self.normalization}")
        if self.chi.kind == "constant" and self.chi.value.shape != (self.grid.n, self.grid.n):
            raise ValueError("constant chi has the wrong size")
        if self.chi.kind == "zdependent" and self.chi.value.shape != self.grid.shape + (self.grid.n, self.grid.n):
            raise ValueError("chi field has the wrong shape")
        if self.psi is not None:
            self.psi = self.grid.full(np.asarray(self.psi, dtype=float))
            lo, hi = self.op.sup_bounds()
            lo = -math.inf if lo is None else lo
            if not (np.all(self.psi > lo) and np.all(self.psi < hi)):
                raise ValueError(f"psi must lie strictly between {lo} and {hi}")

    def with_psi(self, psi) -> "ProblemSpec":
        return ProblemSpec(self.grid, self.metric, self.op, self.chi, psi, self.normalization)

    @cached_property
    def gauduchon(self) -> GauduchonChi | None:
        if self.chi.kind != "gauduchon":
            return None
        return GauduchonChi(self.metric, self.chi.omega0, self.chi.c)

    def chi_field(self, u) -> np.ndarray:
        if self.chi.kind == "constant":
            return np.broadcast_to(self.chi.value, self.grid.shape + self.chi.value.shape)
        if self.chi.kind == "zdependent":
            return self.chi.value
        return self.gauduchon.chi(self.grid.dz_real(u))


def gauduchon_problem(grid: SpectralGrid, metric: MetricField, omega0: MetricField, h, c: float = 1.0, normalization: str = "sup_zero") -> ProblemSpec:
    """log rho_{n-1}(lambda(g[u])) = h + b + n log(n-1) with the Gauduchon chi."""
    n = grid.n
    psi = grid.full(np.asarray(h, dtype=float)) + n * math.log(n - 1)
    return ProblemSpec(grid, metric, OperatorSpec.log_rho_k(n, n - 1), ChiSpec.gauduchon(omega0, c), psi, normalization)


def assemble_g(problem: ProblemSpec, u) -> np.ndarray:
    """g = chi[u] + sqrt(-1) ddbar u, Hermitian-symmetrised."""
    return hermitian_part(problem.chi_field(u) + problem.grid.ddbar(u))


@dataclass
class Evaluation:
    g: np.ndarray
    lam: np.ndarray
    F: np.ndarray
    margin: np.ndarray


def evaluate(problem: ProblemSpec, u) -> Evaluation:
    g = assemble_g(problem, u)
    lam = eigvals_hermitian(hermitian_part(problem.metric.whiten(g)))
    margin = problem.op.domain.margin(lam)
    with np.errstate(invalid="ignore", divide="ignore"):
        F = problem.op.value(lam, check=False)
    return Evaluation(g, lam, F, margin)


def manufacture(problem: ProblemSpec, u_star) -> np.ndarray:
    """psi := F(g[u*]) pointwise."""
    ev = evaluate(problem, u_star)
    if not np.all(ev.margin > 0):
        raise NotAdmissible("u* is not admissible")
    return ev.F


# ---------------------------------------------------------------------------
# linearisation


def operator_derivative(problem: ProblemSpec, g: np.ndarray) -> np.ndarray:
    """F^{i jbar} = dF/dg_{i jbar}, stored so that dF = sum_ij Fmat[i, j] dg[i, j].

    With generalised eigenvectors v_p (g v_p = lambda_p metric v_p, v_p^* metric v_p = 1),
    Fmat[i, j] = sum_p f_p conj(v_p[i]) v_p[j].
    """
    metric = problem.metric
    H = hermitian_part(metric.whiten(g))
    n = problem.grid.n
    op = problem.op
    if n == 2:
        lam = eigvals_hermitian(H)
        _, f, hess = op.jet(lam, hessian=True)
        gap = lam[..., 0] - lam[..., 1]
        tie = gap <= 1e-10 * (1 + np.abs(lam).max(axis=-1))
        with np.errstate(invalid="ignore", divide="ignore"):
            slope = np.where(tie, hess[..., 0, 0] - hess[..., 0, 1], (f[..., 0] - f[..., 1]) / np.where(tie, 1.0, gap))
        eye = np.eye(2)
        Fw = f[..., 1, None, None] * eye + slope[..., None, None] * (H - lam[..., 1, None, None] * eye)
    else:
        vals, U = np.linalg.eigh(H)
        lam = vals[..., ::-1]
        U = U[..., ::-1]
        _, f, _ = op.jet(lam, hessian=False)
        Fw = (U * f[..., None, :]) @ np.conj(np.swapaxes(U, -1, -2))
    if metric.is_conformal:
        Fc = np.exp(-metric.conformal_factor)[..., None, None] * Fw
    else:
        W = metric.whitener
        Fc = np.conj(np.swapaxes(W, -1, -2)) @ Fw @ W
    return np.swapaxes(Fc, -1, -2)


class Linearization:
    """The Newton operator at a fixed admissible u."""

    def __init__(self, problem: ProblemSpec, u, ev: Evaluation | None = None):
        self.problem = problem
        self.grid = problem.grid
        ev = ev if ev is not None else evaluate(problem, u)
        if not np.all(ev.margin > 0):
            raise NotAdmissible("linearisation requested at a non-admissible u")
        self.Fmat = operator_derivative(problem, ev.g)
        self.gchi = problem.gauduchon
        if self.gchi is not None and problem.grid.n > 2:
            # fold sum_ij Fmat[i,j] dchi[i,j](zeta) into K[p] zeta_p + L[p] conj(zeta_p)
            g = problem.metric.g
            ginv = problem.metric.g_inv
            tr_f = _einsum("...ij,...ij->...", self.Fmat, g) / (problem.grid.n - 1)
            weight = tr_f[..., None, None] * ginv - self.Fmat
            C, D = self.gchi.coefficients
            c = self.gchi.c
            self.K = c * _einsum("...ij,...pij->...p", weight, C)
            self.L = c * _einsum("...ij,...pij->...p", weight, D)
        else:
            self.K = self.L = None
        # sum_ij Fmat[i,j] d_i d_jbar as real coefficient fields times real symbols
        self._terms = []
        for i, j, part, sym in self.grid.ddbar_parts():
            f = self.Fmat[..., i, j]
            if i == j:
                coef = f.real
            elif part == 0:
                coef = 2.0 * f.real
            else:
                coef = -2.0 * f.imag
            self._terms.append((np.ascontiguousarray(coef), sym))
        self._null = self.grid.null_mask_half()

    def apply(self, du) -> np.ndarray:
        """Apply the operator; derivative-null modes of du are ignored."""
        grid = self.grid
        spec = grid.rfft(np.asarray(du, dtype=float).reshape(grid.shape))
        spec[self._null] = 0.0
        out = np.zeros(grid.shape)
        for coef, sym in self._terms:
            out += coef * grid.irfft(sym * spec)
        if self.K is not None:
            zeta = grid.dz_real(grid.irfft(spec))
            out = out + (_einsum("...p,...p->...", self.K, zeta) + _einsum("...p,...p->...", self.L, np.conj(zeta))).real
        return out

    @cached_property
    def mean_coefficient(self) -> np.ndarray:
        return hermitian_part(self.Fmat.reshape(-1, self.grid.n, self.grid.n).mean(axis=0))


def linearized_apply(problem: ProblemSpec, u, du) -> np.ndarray:
    """F^{i jbar} (d_i d_jbar du + d chi_{i jbar} / d zeta . d du)."""
    return Linearization(problem, u).apply(du)


class _SpectralPreconditioner:
    def __init__(self, grid: SpectralGrid, coef: np.ndarray):
        self.grid = grid
        sym = grid.laplacian_symbol_half(coef)
        null = grid.null_mask_half() | (np.abs(sym) < 1e-300)
        with np.errstate(divide="ignore"):
            self.inv = np.where(null, 0.0, 1.0 / np.where(null, 1.0, sym))

    def __call__(self, r):
        g = self.grid
        spec = sfft.rfftn(np.asarray(r).reshape(g.shape), axes=g.axes)
        return sfft.irfftn(self.inv * spec, s=g.shape, axes=g.axes).ravel()


# ---------------------------------------------------------------------------
# Newton and continuity


@dataclass
class SolverOptions:
    tol: float = 1e-10
    inner_tol: float = 1e-8
    max_newton: int = 50
    gmres_restart: int = 50
    gmres_rtol: float = 1e-10
    gmres_maxiter: int = 20
    backtrack: float = 0.5
    max_halvings: int = 30
    adm_rtol: float = 1e-8
    dt0: float = 1.0
    dt_min: float = 1e-6


@dataclass
class SolverState:
    u: np.ndarray
    b: float
    t: float
    residual_l2: float
    admissibility_margin: float


@dataclass
class SolutionReport:
    u: np.ndarray
    b: float
    iterations: int
    residual_history: list
    residual_inf: float
    lambda_min: float
    lambda_max: float
    lam: np.ndarray
    max_dd_u: float
    max_grad_u: float
    osc_u: float
    admissibility_margin: float
    t_history: list = field(default_factory=list)
    converged: bool = True

    def summary(self) -> dict:
        return {
            "b": self.b,
            "iterations": self.iterations,
            "residual_inf": self.residual_inf,
            "residual_history": list(self.residual_history),
            "lambda_min": self.lambda_min,
            "lambda_max": self.lambda_max,
            "max_dd_u": self.max_dd_u,
            "max_grad_u": self.max_grad_u,
            "osc_u": self.osc_u,
            "admissibility_margin": self.admissibility_margin,
            "t_history": list(self.t_history),
            "converged": self.converged,
        }


def _residual(ev: Evaluation, psi_t):
    raw = ev.F - psi_t
    b = float(raw.mean())
    return raw - b, b


def _adm_threshold(ev: Evaluation, opts: SolverOptions) -> float:
    return opts.adm_rtol * (1.0 + float(np.abs(ev.lam).max()))


def newton(problem: ProblemSpec, u0, psi_t, tol: float, opts: SolverOptions, history: list | None = None) -> SolverState:
    """Damped Newton for F(g[u]) - psi_t - b = 0 with mean-zero u."""
    grid = problem.grid
    u = grid.filter_real(u0)
    ev = evaluate(problem, u)
    if not np.all(ev.margin > 0):
        raise NotAdmissible("Newton started from a non-admissible u")
    r, b = _residual(ev, psi_t)
    norm2 = float(np.linalg.norm(r))
    N = grid.size
    for _ in range(opts.max_newton):
        rinf = float(np.abs(r).max())
        if history is not None:
            history.append(rinf)
        if rinf <= tol:
            return SolverState(u, b, 1.0, norm2, float(ev.margin.min()))
        lin = Linearization(problem, u, ev)
        pre = _SpectralPreconditioner(grid, lin.mean_coefficient)

        def matvec(v, lin=lin):
            return grid.filter_real(lin.apply(v)).ravel()

        A = LinearOperator((N, N), matvec=matvec, dtype=float)
        M = LinearOperator((N, N), matvec=pre, dtype=float)
        rhs = -grid.filter_real(r).ravel()
        du, _ = gmres(A, rhs, M=M, restart=opts.gmres_restart, rtol=opts.gmres_rtol, atol=0.0, maxiter=opts.gmres_maxiter)
        du = grid.filter_real(du.reshape(grid.shape))
        step = 1.0
        for _ in range(opts.max_halvings + 1):
            cand = u + step * du
            ev_c = evaluate(problem, cand)
            if np.all(np.isfinite(ev_c.F)) and float(ev_c.margin.min()) >= _adm_threshold(ev_c, opts):
                r_c, b_c = _residual(ev_c, psi_t)
                n_c = float(np.linalg.norm(r_c))
                if n_c < norm2:
                    u, ev, r, b, norm2 = cand, ev_c, r_c, b_c, n_c
                    break
            step *= opts.backtrack
        else:
            raise NewtonDiverged(f"line search failed at residual {float(np.abs(r).max()):.3g}")
    rinf = float(np.abs(r).max())
    if history is not None:
        history.append(rinf)
    if rinf <= tol:
        return SolverState(u, b, 1.0, norm2, float(ev.margin.min()))
    raise NewtonDiverged(f"no convergence in {opts.max_newton} iterations (residual {rinf:.3g})")


def solve(problem: ProblemSpec, opts: SolverOptions | None = None) -> SolutionReport:
    """Continuity in psi from psi_0 = F(g[0]) to psi, Newton at every step."""
    opts = opts or SolverOptions()
    if problem.psi is None:
        raise ValueError("problem has no right-hand side")
    grid = problem.grid
    u = np.zeros(grid.shape)
    ev0 = evaluate(problem, u)
    if not np.all(ev0.margin > 0):
        raise NoAdmissibleStart("lambda(chi[0]) is not inside the operator's cone everywhere")
    F0 = ev0.F
    t, dt = 0.0, opts.dt0
    history: list = []
    t_history = [0.0]
    state = None
    while t < 1.0:
        t_try = min(1.0, t + dt)
        psi_t = (1.0 - t_try) * F0 + t_try * problem.psi
        tol = opts.tol if t_try >= 1.0 else max(opts.tol, opts.inner_tol)
        try:
            state = newton(problem, u, psi_t, tol, opts, history)
        except (NewtonDiverged, NotAdmissible):
            dt *= 0.5
            if dt < opts.dt_min:
                raise ContinuityStalled(f"continuity step fell below {opts.dt_min} at t = {t:.6g}")
            continue
        u, t = state.u, t_try
        t_history.append(t)
        dt *= 2.0
    ev = evaluate(problem, u)
    r, b = _residual(ev, problem.psi)
    if problem.normalization == "sup_zero":
        u = u - u.max()
    return _report(problem, u, b, ev, r, history, t_history)


def _report(problem, u, b, ev, r, history, t_history) -> SolutionReport:
    grid, metric = problem.grid, problem.metric
    dd = eigvals_hermitian(hermitian_part(metric.whiten(grid.ddbar(u))))
    zeta = grid.dz_real(u)
    return SolutionReport(
        u=u,
        b=b,
        iterations=len(history),
        residual_history=history,
        residual_inf=float(np.abs(r).max()),
        lambda_min=float(ev.lam[..., -1].min()),
        lambda_max=float(ev.lam[..., 0].max()),
        lam=ev.lam,
        max_dd_u=float(np.abs(dd).max()),
        max_grad_u=float(np.sqrt(metric.norm2_10(zeta).max())),
        osc_u=float(u.max() - u.min()),
        admissibility_margin=float(ev.margin.min()),
        t_history=t_history,
    )


def report_for(problem: ProblemSpec, u) -> SolutionReport:
    """Build a report for a given u (e.g. a known exact solution)."""
    ev = evaluate(problem, u)
    psi = problem.psi if problem.psi is not None else ev.F
    r, b = _residual(ev, psi)
    return _report(problem, np.asarray(u, dtype=float), b, ev, r, [], [])
