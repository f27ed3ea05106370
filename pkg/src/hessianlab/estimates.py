"""Numerical checks of the structural hypotheses and of the a priori estimates.

Nothing here asserts a theorem with a universal constant. Each check either
reports an observed margin or ratio, or returns a three-valued verdict.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import conegeo
from .errors import DegenerateSpectrum, EmptyFamily
from .hermgeo import MetricField, _einsum, christoffel
from .solver import GauduchonChi, ProblemSpec, SolutionReport, evaluate
from .symfun import OperatorSpec, sample_domain


# ---------------------------------------------------------------------------
# second order estimates


@dataclass
class EstimateReport:
    max_dd_u: float
    max_grad_u: float
    osc_u: float
    ratio_HMW: float
    C2_fit: float
    rows: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "max_dd_u": self.max_dd_u,
            "max_grad_u": self.max_grad_u,
            "osc_u": self.osc_u,
            "ratio_HMW": self.ratio_HMW,
            "C2_fit": self.C2_fit,
            "rows": self.rows,
        }


def second_order_report(solutions) -> EstimateReport:
    """Observed ratios max|ddbar u| / (1 + max|du|^2) across a family of solutions.

    ``C2_fit`` is the least-squares slope of log max|ddbar u| against osc u,
    reported as 0 when fewer than two solutions have nonzero Hessian or the
    oscillations coincide. Family-level fields are maxima over the family.
    """
    solutions = list(solutions)
    if not solutions:
        raise EmptyFamily("second_order_report needs at least one solution")
    rows = []
    for s in solutions:
        ratio = s.max_dd_u / (1.0 + s.max_grad_u**2)
        rows.append({"max_dd_u": s.max_dd_u, "max_grad_u": s.max_grad_u, "osc_u": s.osc_u, "ratio_HMW": ratio})
    osc = np.array([r["osc_u"] for r in rows])
    dd = np.array([r["max_dd_u"] for r in rows])
    keep = dd > 0
    c2 = 0.0
    if keep.sum() >= 2 and np.ptp(osc[keep]) > 0:
        c2 = float(np.polyfit(osc[keep], np.log(dd[keep]), 1)[0])
    return EstimateReport(
        max_dd_u=float(dd.max()),
        max_grad_u=float(max(r["max_grad_u"] for r in rows)),
        osc_u=float(osc.max()),
        ratio_HMW=float(max(r["ratio_HMW"] for r in rows)),
        C2_fit=max(c2, 0.0) if np.isfinite(c2) else 0.0,
        rows=rows,
    )


# ---------------------------------------------------------------------------
# concavity inequality


@dataclass
class CnsReport:
    trials: int
    violations: int
    skipped: int
    min_margin: float
    rows: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"trials": self.trials, "violations": self.violations, "skipped": self.skipped, "min_margin": self.min_margin}


def random_hermitian(rng, count: int, n: int) -> np.ndarray:
    A = rng.standard_normal((count, n, n)) + 1j * rng.standard_normal((count, n, n))
    return 0.5 * (A + np.conj(np.swapaxes(A, -1, -2)))


def _second_directional(op: OperatorSpec, lam: np.ndarray, B: np.ndarray, levels: int = 24) -> np.ndarray:
    """d^2/ds^2 F(diag(lam) + s B) at s = 0 by finite differences.

    Candidates come from halving ladders of central differences and of
    one-sided differences (0, s, 2s, 3s) in both directions. The ladders start
    at four times the local length |grad f| / |hess f| (capped at 1 + max|lam|
    where f is flat) divided by |B|, near the Taylor radius set by the
    distance to the cone boundary. Each adjacent pair on a ladder gives one Richardson value, and per trial
    the value that agrees best with both of its neighbours, after a round-off
    penalty, is kept. Near the cone boundary the line through diag(lam)
    usually leaves the domain quickly on one side only, so a one-sided ladder
    stays usable at steps where the central one is already NaN. Steps that
    leave the domain give NaN and are never selected.
    """
    n = lam.shape[-1]
    base = np.zeros(lam.shape + (n,), dtype=complex)
    idx = np.arange(n)
    base[..., idx, idx] = lam
    f0, g, H = op.jet(lam)
    grad_l1 = np.abs(g).sum(axis=-1)
    bnorm = np.linalg.norm(B, axis=(-1, -2), ord=2)
    lam_max = np.abs(lam).max(axis=-1)
    hnorm = np.linalg.norm(H, axis=(-1, -2), ord=2)
    with np.errstate(divide="ignore"):
        length = np.minimum(np.linalg.norm(g, axis=-1) / hnorm, 1.0 + lam_max)
    h = 4.0 * length / bnorm

    def at(s):
        return op.value(np.linalg.eigvalsh(base + s[:, None, None] * B), check=True)

    def ulp(step):
        # round-off in F from an eigensolve of a matrix of this size
        return np.finfo(float).eps * (np.abs(f0) + grad_l1 * (lam_max + bnorm * step))

    def ladder(start, stencil, weight):
        steps = start[None, :] * 0.5 ** np.arange(levels)[:, None]
        raw = np.array([stencil(step) / (step * step) for step in steps])
        rich = (4.0 * raw[1:] - raw[:-1]) / 3.0
        d = np.abs(np.diff(rich, axis=0))
        err = np.maximum(d[:-1], d[1:]) + weight * ulp(steps[2:-1]) / steps[2:-1] ** 2
        return rich[1:-1], np.where(np.isfinite(err), err, np.inf)

    cands = [ladder(h, lambda s: at(s) - 2.0 * f0 + at(-s), 8.0)]
    for sign in (1.0, -1.0):
        cands.append(ladder(h, lambda s, c=sign: 2.0 * f0 - 5.0 * at(c * s) + 4.0 * at(2 * c * s) - at(3 * c * s), 24.0))
    vals = np.concatenate([c[0] for c in cands])
    errs = np.concatenate([c[1] for c in cands])
    best = np.argmin(errs, axis=0)
    return vals[best, np.arange(vals.shape[1])]


def cns_rhs(op: OperatorSpec, lam: np.ndarray, B: np.ndarray) -> np.ndarray:
    """sum_{i != j} (f_i - f_j) / (lam_j - lam_i) |B_ij|^2."""
    f = op.grad(lam)
    dl = lam[..., None, :] - lam[..., :, None]  # lam_j - lam_i
    df = f[..., :, None] - f[..., None, :]  # f_i - f_j
    n = lam.shape[-1]
    off = ~np.eye(n, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(off, df / np.where(off, dl, 1.0), 0.0)
    return np.sum(q * np.abs(B) ** 2, axis=(-1, -2))


def cns_inequality_check(op: OperatorSpec, lam=None, B=None, trials: int = 10_000, seed=0, box: float = 10.0, tie_tol: float = 1e-8, rtol: float = 1e-7) -> CnsReport:
    """Check -F^{ij,kl} B_ij conj(B_kl) >= sum_{i != j} (f_i - f_j)/(lam_j - lam_i) |B_ij|^2 at diag(lam).

    The left side is a second directional difference of F through a batched
    Hermitian eigensolve; the right side comes from the jet. Trials with
    |lam_i - lam_j| <= tie_tol are skipped and counted. A violation is a margin
    below ``-rtol * (1 + |L| + |R|)``.
    """
    rng = np.random.default_rng(seed)
    n = op.n
    if lam is None:
        lam = sample_domain(op, trials, rng, box=box)
    lam = np.sort(np.atleast_2d(np.asarray(lam, dtype=float)), axis=-1)[..., ::-1]
    if B is None:
        B = random_hermitian(rng, len(lam), n)
    B = np.asarray(B, dtype=complex)
    if B.ndim == 2:
        B = np.broadcast_to(B, (len(lam), n, n))
    gaps = np.abs(np.diff(lam, axis=-1)).min(axis=-1)
    tied = gaps <= tie_tol
    if tied.all():
        raise DegenerateSpectrum("every trial has tied eigenvalues")
    lam_ok, B_ok = lam[~tied], B[~tied]
    left = -_second_directional(op, lam_ok, B_ok)
    right = cns_rhs(op, lam_ok, B_ok)
    margin = left - right
    scale = 1.0 + np.abs(left) + np.abs(right)
    viol = margin < -rtol * scale
    rows = [{"lambda": l.tolist(), "left": float(a), "right": float(b), "margin": float(m)} for l, a, b, m in zip(lam_ok[:50], left[:50], right[:50], margin[:50])]
    return CnsReport(len(lam), int(viol.sum()), int(tied.sum()), float((margin / scale).min()), rows)


def cns_sides(op: OperatorSpec, lam, B):
    """(left, right) of the concavity inequality for one (lam, B)."""
    lam = np.sort(np.asarray(lam, dtype=float))[::-1]
    if np.abs(np.diff(lam)).min() <= 1e-8:
        raise DegenerateSpectrum("tied eigenvalues")
    B = np.asarray(B, dtype=complex)[None]
    left = -_second_directional(op, lam[None], B)[0]
    right = cns_rhs(op, lam[None], B)[0]
    return float(left), float(right)


# ---------------------------------------------------------------------------
# conditions on chi in the gradient slot


def _chi_pointwise(chi, metric: MetricField | None):
    """Return fn(index, zeta) -> chi matrix at a grid point for a gradient value zeta."""
    if callable(chi) and not hasattr(chi, "kind"):
        return lambda idx, zeta: np.asarray(chi(zeta), dtype=complex)
    if chi.kind == "constant":
        return lambda idx, zeta: chi.value
    if chi.kind == "zdependent":
        return lambda idx, zeta: chi.value[idx]
    gchi = GauduchonChi(metric, chi.omega0, chi.c)
    C, D = gchi.coefficients
    t0 = gchi.chi_tilde0

    def fn(idx, zeta):
        Et = np.einsum("p,pij->ij", zeta, C[idx]) + np.einsum("p,pij->ij", np.conj(zeta), D[idx])
        Xt = t0[idx] + gchi.c * Et
        tr = np.einsum("ij,ij->", metric.g_inv[idx], Xt)
        return tr / (gchi.n - 1) * metric.g[idx] - Xt

    return fn


def _orthonormal_pair(rng, G):
    """xi, eta with |xi|_g = |eta|_g = 1 and sum g_{i jbar} xi_i conj(eta_j) = 0."""
    n = G.shape[0]
    inner = lambda a, b: np.einsum("ij,i,j->", G, a, np.conj(b))
    xi = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    xi /= math.sqrt(inner(xi, xi).real)
    eta = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    eta = eta - inner(eta, xi) / inner(xi, xi) * xi
    eta /= math.sqrt(inner(eta, eta).real)
    return xi, eta


@dataclass
class ChiCondition:
    status: str  # "holds" | "fails"
    c0: float
    max_form: float
    witness: dict | None = None


def a3_check(chi, metric: MetricField | None = None, samples: int = 200, seed=0, step: float = 1e-5, zeta_scale: float = 1.0, tol: float = 1e-4) -> ChiCondition:
    """Sampled test of sum chi_{i jbar, zeta_k zetabar_l} xi_i conj(xi_j) eta_k conj(eta_l) <= -c0 |xi|^2 |eta|^2.

    The mixed Wirtinger derivative along eta is (1/4) of the Laplacian of
    w -> xi^* chi(zeta + w eta) xi in the complex variable w, taken by central
    differences with the given step. Holds with c0 = -max when the max form is
    below ``-tol``.
    """
    rng = np.random.default_rng(seed)
    fn = _chi_pointwise(chi, metric)
    grid_shape = metric.grid.shape if metric is not None else None
    n = metric.n if metric is not None else None
    worst, witness = -math.inf, None
    for _ in range(samples):
        idx = tuple(int(rng.integers(0, s)) for s in grid_shape) if grid_shape else ()
        G = metric.g[idx] if metric is not None else None
        if n is None:
            n = np.asarray(fn(idx, np.zeros(1, dtype=complex))).shape[0] if G is None else G.shape[0]
        if G is None:
            G = np.eye(n)
        zeta = zeta_scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
        xi, eta = _orthonormal_pair(rng, G)

        def phi(w):
            X = fn(idx, zeta + w * eta)
            return float(np.real(np.einsum("i,ij,j->", xi, X, np.conj(xi))))

        p0 = phi(0.0)
        form = 0.25 * (phi(step) + phi(-step) + phi(1j * step) + phi(-1j * step) - 4 * p0) / step**2
        if form > worst:
            worst, witness = form, {"index": list(idx), "zeta": [complex(z) for z in zeta], "form": form}
    if worst < -tol:
        return ChiCondition("holds", -worst, worst, None)
    return ChiCondition("fails", 0.0, worst, witness)


def a2_check(chi, metric: MetricField | None = None, samples: int = 200, seed=0, step: float = 1e-4, tol: float = 1e-5) -> ChiCondition:
    """Sampled concavity of p -> chi_{xi xibar}(p) along real directions in the gradient slot.

    ``c0`` reports the largest observed second derivative (0 for linear chi).
    """
    rng = np.random.default_rng(seed)
    fn = _chi_pointwise(chi, metric)
    worst, witness = -math.inf, None
    for _ in range(samples):
        idx = tuple(int(rng.integers(0, s)) for s in metric.grid.shape) if metric is not None else ()
        G = metric.g[idx] if metric is not None else np.eye(np.asarray(fn((), np.zeros(2, complex))).shape[0])
        n = G.shape[0]
        zeta = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        xi, eta = _orthonormal_pair(rng, G)
        eta = eta * np.exp(1j * rng.uniform(0, 2 * np.pi))

        def phi(t):
            X = fn(idx, zeta + t * eta)
            return float(np.real(np.einsum("i,ij,j->", xi, X, np.conj(xi))))

        d2 = (phi(step) - 2 * phi(0.0) + phi(-step)) / step**2
        if d2 > worst:
            worst, witness = d2, {"index": list(idx), "second_derivative": d2}
    status = "holds" if worst <= tol else "fails"
    return ChiCondition(status, max(worst, 0.0), worst, None if status == "holds" else witness)


@dataclass
class A5Report:
    max_ratio: float
    identity_residual: float
    identity_scale: float
    structure_residual: float
    alpha_max: int
    points: int
    rows: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "max_ratio": self.max_ratio,
            "identity_residual": self.identity_residual,
            "identity_scale": self.identity_scale,
            "structure_residual": self.structure_residual,
            "alpha_max": self.alpha_max,
            "points": self.points,
        }


def analytic_rank(op: OperatorSpec) -> int | None:
    if op.family == "log_rho_k":
        return op.k
    if op.family == "sigma_k_root":
        return op.n - op.k + 1
    return None


def _zeta_jacobian(fn, zeta, h: float):
    """Wirtinger derivatives d/d zeta_alpha of a field-valued affine map, by central differences."""
    n = zeta.shape[-1]
    out = []
    for a in range(n):
        e = np.zeros(n)
        e[a] = 1.0
        dre = (fn(zeta + h * e) - fn(zeta - h * e)) / (2 * h)
        dim = (fn(zeta + 1j * h * e) - fn(zeta - 1j * h * e)) / (2 * h)
        out.append(0.5 * (dre - 1j * dim))
    return np.stack(out, axis=-3)  # [..., alpha, i, j]


def a5_check(problem: ProblemSpec, u, step: float = 1e-5) -> A5Report:
    """Evaluate the gradient-slot ratio and the diagonal reduction identity in eigenframes.

    At every grid point the unitary frame diagonalising g[u] (lambda
    descending) is used. With D = covariant dbar-derivative of d chi / d zeta,
    the report contains

    * max over points of (|sum_i f_i D_{i ibar 1bar, 1}| + sum_i f_i |chi_{i 1bar, zeta_1}|^2) / (lambda_1 f_1)
    * the max difference between sum_i F^{i ibar} D_{i ibar 1bar, 1} and
      sum_{j != 1} Dtilde_{j jbar 1bar, 1} / eta_j (chi~ in place of chi), with
      eta_j = sum lambda - lambda_j
    * the largest frame component Dtilde_{i ibar ibar, i} and d chi~_{i jbar}/d zeta_j.
    """
    gchi = problem.gauduchon
    if gchi is None:
        raise ValueError("a5_check needs a Gauduchon problem")
    grid, metric, op = problem.grid, problem.metric, problem.op
    n = grid.n
    r0 = analytic_rank(op) or n
    alpha_max = max(1, n - r0)
    zeta = grid.dz_real(u)
    A = _zeta_jacobian(gchi.chi, zeta, step)  # [..., alpha, i, j]
    At = _zeta_jacobian(gchi.chi_tilde, zeta, step)
    gamma = christoffel(metric)  # [..., k, j, l]
    gb = np.conj(gamma)

    def cov_dbar(X):
        # X_{i jbar kbar, alpha} = d_kbar X[alpha, i, j] - conj(Gamma_{kj}^l) X[alpha, i, l]
        dX = grid.grad(X, conj=True)  # [..., k, alpha, i, j]
        return dX - _einsum("...kjl,...ail->...kaij", gb, X)

    D = cov_dbar(A)
    Dt = cov_dbar(At)
    ev = evaluate(problem, u)
    H = metric.whiten(ev.g)
    H = 0.5 * (H + np.conj(np.swapaxes(H, -1, -2)))
    vals, U = np.linalg.eigh(H)
    lam = vals[..., ::-1]
    U = U[..., ::-1]
    # generalised eigenvectors V with V^* g V = I; frame vectors e_a = sum_i conj(V[i, a]) d_i
    V = np.conj(np.swapaxes(metric.whitener, -1, -2)) @ U
    W = np.conj(V)
    Winv = np.linalg.inv(W)
    _, f, _ = op.jet(lam, hessian=False)

    def frame_diag(T4, a_dir):
        # component [c=0 (1bar), d=a_dir (zeta), a, a] for each a
        return _einsum("...k,...b,...ic,...jc,...kbij->...c", np.conj(W[..., :, 0]), Winv[..., a_dir, :], W, np.conj(W), T4)

    S = frame_diag(D, 0)  # chi_{a abar 1bar, zeta_1}
    St = frame_diag(Dt, 0)
    direct = np.sum(f * S, axis=-1)
    eta = lam.sum(axis=-1, keepdims=True) - lam
    reduced = np.sum(St[..., 1:] / eta[..., 1:], axis=-1)
    identity_residual = float(np.abs(direct - reduced).max())
    identity_scale = float(max(np.abs(direct).max(), np.abs(reduced).max()))
    structure = float(np.abs(St[..., 0]).max())
    # d chi~_{i jbar} / d zeta_j in the frame
    Af = _einsum("...ia,...jb,...dk,...kij->...dab", W, np.conj(W), Winv, At)
    structure = max(structure, float(max(np.abs(Af[..., j, i, j]).max() for i in range(n) for j in range(n))))
    ratios = np.zeros(grid.shape)
    for alpha in range(alpha_max):
        Sa = frame_diag(D, alpha)
        A1 = _einsum("...ia,...j,...k,...kij->...a", W, np.conj(W[..., :, 0]), Winv[..., alpha, :], A)
        left = np.abs(np.sum(f * Sa, axis=-1)) + np.sum(f * np.abs(A1) ** 2, axis=-1)
        right = lam[..., 0] * f[..., alpha]
        ratios = np.maximum(ratios, left / right)
    return A5Report(float(ratios.max()), identity_residual, identity_scale, structure, alpha_max, grid.size)


# ---------------------------------------------------------------------------
# subsolutions


@dataclass
class SubsolutionReport:
    cplus: np.ndarray
    ctilde: np.ndarray
    counts: dict

    @property
    def all_in(self) -> bool:
        return self.counts["cplus"].get("out", 0) == 0 and self.counts["ctilde"].get("out", 0) == 0 and self.counts["cplus"].get("inconclusive", 0) == 0

    @property
    def any_out(self) -> bool:
        return self.counts["cplus"].get("out", 0) > 0 or self.counts["ctilde"].get("out", 0) > 0


def subsolution_check(problem: ProblemSpec, ubar, radii=conegeo.DEFAULT_SHELLS, count: int | None = None, seed=0, decimals: int = 10) -> SubsolutionReport:
    """Per-point membership of mu = lambda(g[ubar]) in the cones at level psi(z).

    Points with mu inside the level set are answered directly. Other points
    are grouped by (rounded) (mu, psi) and each group is queried once; for
    homogeneous operators the level set at psi is a dilation of a reference
    one, so shell samples are reused across levels.
    """
    if problem.psi is None:
        raise ValueError("problem has no right-hand side")
    ev = evaluate(problem, ubar)
    op = problem.op
    mu = ev.lam.reshape(-1, op.n)
    psi = problem.psi.reshape(-1)
    inside = op.domain.inside(mu) & (op.value(mu) > psi)
    cplus = np.full(mu.shape[0], "in", dtype=object)
    ctilde = np.full(mu.shape[0], "in", dtype=object)
    rest = np.flatnonzero(~inside)
    if rest.size:
        key = np.round(np.column_stack([mu[rest], psi[rest]]), decimals)
        uniq, inv = np.unique(key, axis=0, return_inverse=True)
        ref = None
        if op.homogeneity is not None:
            ref = conegeo.LevelSetHandle.build(op)
        res_p, res_t = [], []
        for row in uniq:
            m, level = row[:-1], float(row[-1])
            if ref is not None:
                try:
                    ls, s = ref.rescaled(level)
                    ls_ref, m_ref = ref, m / s
                except ValueError:
                    ls_ref, m_ref = conegeo.LevelSetHandle.build(op, level), m
            else:
                ls_ref, m_ref = conegeo.LevelSetHandle.build(op, level), m
            res_p.append(conegeo.membership_cplus(ls_ref, m_ref, radii, count, seed).status)
            t = conegeo.membership_ctilde(ls_ref, m_ref, radii, count, seed).status
            res_t.append("in" if t == "equals_Rn" else t)
        cplus[rest] = np.array(res_p, dtype=object)[inv.ravel()]
        ctilde[rest] = np.array(res_t, dtype=object)[inv.ravel()]
    counts = {
        "cplus": {k: int(np.sum(cplus == k)) for k in ("in", "out", "inconclusive")},
        "ctilde": {k: int(np.sum(ctilde == k)) for k in ("in", "out")},
    }
    shape = problem.grid.shape
    return SubsolutionReport(cplus.reshape(shape), ctilde.reshape(shape), counts)
