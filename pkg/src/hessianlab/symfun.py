"""Symmetric operator kernels f(lambda) and their domain cones.

Every kernel here works on batches: an eigenvalue array of shape ``(..., n)``
maps to values of shape ``(...)``, gradients ``(..., n)`` and Hessians
``(..., n, n)``. Scalar-facing helpers (`eval_jet`, `cone_contains`) wrap the
batch kernels for a single `LambdaVec`.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionTooLarge, OutsideDomain

MAX_RHO_DIM = 8


@dataclass(frozen=True, init=False)
class LambdaVec:
    """An eigenvalue n-tuple stored in descending order."""

    entries: tuple

    def __init__(self, values):
        arr = np.asarray(values, dtype=float).ravel()
        if arr.size < 2:
            raise ValueError("LambdaVec needs n >= 2 entries")
        if not np.all(np.isfinite(arr)):
            raise ValueError("LambdaVec entries must be finite")
        object.__setattr__(self, "entries", tuple(np.sort(arr)[::-1].tolist()))

    @property
    def n(self) -> int:
        return len(self.entries)

    def array(self) -> np.ndarray:
        return np.array(self.entries)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def _as_array(lam) -> np.ndarray:
    if isinstance(lam, LambdaVec):
        return lam.array()
    return np.asarray(lam, dtype=float)


# ---------------------------------------------------------------------------
# elementary symmetric functions


def sigma_all(lam) -> np.ndarray:
    """Return (sigma_0, ..., sigma_n) of ``lam`` along the last axis.

    Uses the one-variable-at-a-time recurrence
    ``e_k <- e_k + x * e_{k-1}``, which is O(n^2) and avoids subset sums.
    """
    lam = _as_array(lam)
    n = lam.shape[-1]
    out = np.zeros(lam.shape[:-1] + (n + 1,), dtype=lam.dtype)
    out[..., 0] = 1.0
    for i in range(n):
        x = lam[..., i]
        for k in range(i + 1, 0, -1):
            out[..., k] = out[..., k] + x * out[..., k - 1]
    return out


def _deleted(lam: np.ndarray, drop: tuple) -> np.ndarray:
    keep = [i for i in range(lam.shape[-1]) if i not in drop]
    return lam[..., keep]


def sigma_derivatives(lam, k: int):
    """sigma_k together with its gradient and Hessian in lambda.

    dsigma_k/dlambda_i = sigma_{k-1}(lambda | i) and, off the diagonal,
    d2sigma_k/dlambda_i dlambda_j = sigma_{k-2}(lambda | i, j).
    """
    lam = _as_array(lam)
    n = lam.shape[-1]
    batch = lam.shape[:-1]
    value = sigma_all(lam)[..., k]
    grad = np.zeros(batch + (n,))
    hess = np.zeros(batch + (n, n))
    if k == 0:
        return value, grad, hess
    for i in range(n):
        grad[..., i] = sigma_all(_deleted(lam, (i,)))[..., k - 1]
    if k >= 2:
        for i, j in itertools.combinations(range(n), 2):
            h = sigma_all(_deleted(lam, (i, j)))[..., k - 2]
            hess[..., i, j] = h
            hess[..., j, i] = h
    return value, grad, hess


def _subsets(n: int, k: int) -> np.ndarray:
    rows = []
    for combo in itertools.combinations(range(n), k):
        row = np.zeros(n)
        row[list(combo)] = 1.0
        rows.append(row)
    return np.array(rows)


def rho_k(lam, k: int):
    """Product of all k-fold partial sums of ``lam``."""
    lam = _as_array(lam)
    n = lam.shape[-1]
    if n > MAX_RHO_DIM:
        raise DimensionTooLarge(f"rho_k enumerates subsets; n={n} exceeds {MAX_RHO_DIM}")
    if not 1 <= k <= n:
        raise ValueError(f"rho_k needs 1 <= k <= n, got k={k}, n={n}")
    sums = lam @ _subsets(n, k).T
    return np.prod(sums, axis=-1)


# ---------------------------------------------------------------------------
# cones


class Membership(enum.Enum):
    INSIDE = "inside"
    BOUNDARY = "boundary"
    OUTSIDE = "outside"


@dataclass(frozen=True)
class ConeSpec:
    """A symmetric open convex cone containing the positive orthant.

    ``kind`` is one of ``gamma_k``, ``p_k``, ``gamma_n`` or ``half_space``.
    The half space is ``{normal . lambda > 0}`` with ``normal`` in the closed
    positive orthant (all ones when omitted, which is the same set as Gamma_1).
    """

    kind: str
    n: int
    k: int = 0
    normal: tuple | None = None

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("cones need n >= 2")
        if self.kind in ("gamma_k", "p_k"):
            if not 1 <= self.k <= self.n:
                raise ValueError(f"{self.kind} needs 1 <= k <= n")
        elif self.kind == "gamma_n":
            object.__setattr__(self, "k", self.n)
        elif self.kind == "half_space":
            nu = np.ones(self.n) if self.normal is None else np.asarray(self.normal, float)
            if nu.shape != (self.n,) or np.any(nu < 0) or not np.any(nu > 0):
                raise ValueError("half_space normal must lie in the closed positive orthant")
            object.__setattr__(self, "normal", tuple((nu / np.linalg.norm(nu)).tolist()))
        else:
            raise ValueError(f"unknown cone kind {self.kind!r}")

    @classmethod
    def gamma_k(cls, n, k):
        return cls("gamma_k", n, k)

    @classmethod
    def p_k(cls, n, k):
        return cls("p_k", n, k)

    @classmethod
    def gamma_n(cls, n):
        return cls("gamma_n", n)

    @classmethod
    def half_space(cls, n, normal=None):
        return cls("half_space", n, 0, None if normal is None else tuple(normal))

    @property
    def label(self) -> str:
        if self.kind == "gamma_n":
            return "Gamma_n"
        if self.kind == "half_space":
            return "HalfSpace"
        return ("Gamma_" if self.kind == "gamma_k" else "P_") + str(self.k)

    def margin(self, lam) -> np.ndarray:
        """Signed, degree-one homogeneous distance-like margin.

        Positive exactly on the open cone. For Gamma_k each defining
        inequality sigma_j > 0 enters through sign(sigma_j)|sigma_j|^(1/j) so
        all constraints scale like |lambda|.
        """
        lam = _as_array(lam)
        if lam.shape[-1] != self.n:
            raise ValueError(f"cone dimension {self.n} does not match lambda of length {lam.shape[-1]}")
        if self.kind == "gamma_n":
            return lam.min(axis=-1)
        if self.kind == "p_k":
            return np.sort(lam, axis=-1)[..., : self.k].sum(axis=-1)
        if self.kind == "half_space":
            return lam @ np.asarray(self.normal)
        s = sigma_all(lam)
        cols = [np.sign(s[..., j]) * np.abs(s[..., j]) ** (1.0 / j) for j in range(1, self.k + 1)]
        return np.min(np.stack(cols, axis=-1), axis=-1)

    def inside(self, lam, tol: float = 0.0) -> np.ndarray:
        lam = _as_array(lam)
        scale = 1.0 + np.linalg.norm(lam, axis=-1)
        return self.margin(lam) > tol * scale


def cone_contains(cone: ConeSpec, lam, tol: float = 1e-12) -> Membership:
    """Classify ``lam`` against ``cone`` with a tolerance relative to 1+|lam|."""
    arr = _as_array(lam)
    if arr.shape != (cone.n,):
        raise ValueError("cone_contains expects a single n-tuple")
    band = tol * (1.0 + np.linalg.norm(arr))
    m = float(cone.margin(arr))
    if m > band:
        return Membership.INSIDE
    if m < -band:
        return Membership.OUTSIDE
    return Membership.BOUNDARY


# ---------------------------------------------------------------------------
# operators

FAMILIES = ("sigma_k_root", "sigma_quotient", "sigma_k_over_km1", "log_rho_k", "sum_arctan")


@dataclass(frozen=True)
class OperatorJet:
    value: float
    grad: np.ndarray
    hess: np.ndarray


@dataclass(frozen=True)
class OperatorSpec:
    """One of the operator families together with its domain cone.

    ``sum_arctan`` is defined on all of R^n; its domain defaults to Gamma_n,
    where it is concave, and may be overridden with any `ConeSpec`.
    """

    family: str
    n: int
    k: int = 1
    l: int = 0
    domain: ConeSpec | None = field(default=None, compare=True)

    def __post_init__(self):
        n, k, l = self.n, self.k, self.l
        if self.family not in FAMILIES:
            raise ValueError(f"unknown operator family {self.family!r}")
        if n < 2:
            raise ValueError("operators need n >= 2")
        if self.family == "sigma_k_root":
            if not 1 <= k <= n:
                raise ValueError("sigma_k_root needs 1 <= k <= n")
            natural = ConeSpec.gamma_k(n, k)
        elif self.family == "sigma_quotient":
            if not 0 <= l < k <= n:
                raise ValueError("sigma_quotient needs 0 <= l < k <= n")
            natural = ConeSpec.gamma_k(n, k)
        elif self.family == "sigma_k_over_km1":
            if not 2 <= k <= n:
                raise ValueError("sigma_k_over_km1 needs 2 <= k <= n")
            natural = ConeSpec.gamma_k(n, k - 1)
        elif self.family == "log_rho_k":
            if not 1 <= k <= n:
                raise ValueError("log_rho_k needs 1 <= k <= n")
            if n > MAX_RHO_DIM:
                raise DimensionTooLarge(f"log_rho_k supports n <= {MAX_RHO_DIM}")
            natural = ConeSpec.p_k(n, k)
        else:
            natural = ConeSpec.gamma_n(n)
        if self.domain is None:
            object.__setattr__(self, "domain", natural)
        elif self.family != "sum_arctan" and self.domain != natural:
            raise ValueError(f"{self.family} lives on {natural.label}, not {self.domain.label}")
        if self.domain.n != n:
            raise ValueError("domain dimension mismatch")

    # constructors -------------------------------------------------------
    @classmethod
    def sigma_k_root(cls, n, k):
        return cls("sigma_k_root", n, k, 0)

    @classmethod
    def sigma_quotient(cls, n, k, l):
        return cls("sigma_quotient", n, k, l)

    @classmethod
    def sigma_k_over_km1(cls, n, k):
        return cls("sigma_k_over_km1", n, k, k - 1)

    @classmethod
    def log_rho_k(cls, n, k):
        return cls("log_rho_k", n, k, 0)

    @classmethod
    def sum_arctan(cls, n, domain: ConeSpec | None = None):
        return cls("sum_arctan", n, 0, 0, domain)

    @property
    def label(self) -> str:
        if self.family == "sigma_k_root":
            return f"sigma_{self.k}^(1/{self.k})"
        if self.family == "sigma_quotient":
            return f"(sigma_{self.k}/sigma_{self.l})^(1/{self.k - self.l})"
        if self.family == "sigma_k_over_km1":
            return f"sigma_{self.k}/sigma_{self.k - 1}"
        if self.family == "log_rho_k":
            return f"log rho_{self.k}"
        return "sum arctan"

    @property
    def homogeneity(self):
        """('linear', 1) for degree-one homogeneous f, ('log', c) when
        f(t lam) = f(lam) + c log t, None otherwise."""
        if self.family in ("sigma_k_root", "sigma_quotient", "sigma_k_over_km1"):
            return ("linear", 1.0)
        if self.family == "log_rho_k":
            return ("log", float(math.comb(self.n, self.k)))
        return None

    def sup_bounds(self):
        """Closed-form (sup over the cone boundary, sup over the cone)."""
        if self.family == "log_rho_k":
            return -math.inf, math.inf
        if self.family == "sum_arctan":
            if self.domain.kind == "gamma_n":
                return (self.n - 1) * math.pi / 2, self.n * math.pi / 2
            return None, self.n * math.pi / 2
        return 0.0, math.inf

    # batch kernels ------------------------------------------------------
    def _subsets(self):
        return _subsets(self.n, self.k)

    def value(self, lam, check: bool = True) -> np.ndarray:
        """f on a batch; NaN outside the domain when ``check`` is set."""
        lam = _as_array(lam)
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            v = self._raw_value(lam)
            if check:
                v = np.where(self.domain.margin(lam) > 0, v, np.nan)
        return v

    def _raw_value(self, lam):
        fam = self.family
        if fam in ("sigma_k_root", "sigma_quotient"):
            s = sigma_all(lam)
            return (s[..., self.k] / s[..., self.l]) ** (1.0 / (self.k - self.l))
        if fam == "sigma_k_over_km1":
            s = sigma_all(lam)
            return s[..., self.k] / s[..., self.k - 1]
        if fam == "log_rho_k":
            return np.log(lam @ self._subsets().T).sum(axis=-1)
        return np.arctan(lam).sum(axis=-1)

    def grad(self, lam) -> np.ndarray:
        return self.jet(lam, hessian=False)[1]

    def jet(self, lam, hessian: bool = True):
        """Return (value, grad, hess) on a batch; hess is None when not requested."""
        lam = _as_array(lam)
        fam = self.family
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            if fam in ("sigma_k_root", "sigma_quotient"):
                return self._jet_quotient(lam, hessian)
            if fam == "sigma_k_over_km1":
                return self._jet_ratio(lam, hessian)
            if fam == "log_rho_k":
                a = self._subsets()
                s = lam @ a.T
                inv = 1.0 / s
                v = np.log(s).sum(axis=-1)
                g = inv @ a
                h = -np.einsum("...c,ci,cj->...ij", inv * inv, a, a) if hessian else None
                return v, g, h
            v = np.arctan(lam).sum(axis=-1)
            d = 1.0 / (1.0 + lam * lam)
            h = None
            if hessian:
                h = np.zeros(lam.shape + (lam.shape[-1],))
                idx = np.arange(lam.shape[-1])
                h[..., idx, idx] = -2.0 * lam * d * d
            return v, d, h

    def _jet_quotient(self, lam, hessian):
        # f = exp(g), g = (log sigma_k - log sigma_l)/(k - l)
        k, l = self.k, self.l
        sk, gk, hk = sigma_derivatives(lam, k)
        sl, gl, hl = sigma_derivatives(lam, l)
        p = 1.0 / (k - l)
        v = (sk / sl) ** p
        dk = gk / sk[..., None]
        dl = gl / sl[..., None]
        dg = p * (dk - dl)
        g = v[..., None] * dg
        h = None
        if hessian:
            hk_log = hk / sk[..., None, None] - dk[..., :, None] * dk[..., None, :]
            hl_log = hl / sl[..., None, None] - dl[..., :, None] * dl[..., None, :]
            d2g = p * (hk_log - hl_log)
            h = v[..., None, None] * (d2g + dg[..., :, None] * dg[..., None, :])
        return v, g, h

    def _jet_ratio(self, lam, hessian):
        a, ga, ha = sigma_derivatives(lam, self.k)
        b, gb, hb = sigma_derivatives(lam, self.k - 1)
        v = a / b
        g = ga / b[..., None] - (a / b**2)[..., None] * gb
        h = None
        if hessian:
            outer_ab = ga[..., :, None] * gb[..., None, :]
            h = (
                ha / b[..., None, None]
                - (outer_ab + np.swapaxes(outer_ab, -1, -2)) / (b**2)[..., None, None]
                - (a / b**2)[..., None, None] * hb
                + (2 * a / b**3)[..., None, None] * gb[..., :, None] * gb[..., None, :]
            )
        return v, g, h


def eval_jet(op: OperatorSpec, lam) -> OperatorJet:
    """Value, gradient and Hessian of ``op`` at a single interior point."""
    arr = _as_array(lam)
    if cone_contains(op.domain, arr) is not Membership.INSIDE:
        raise OutsideDomain(f"{arr} is not inside {op.domain.label}")
    v, g, h = op.jet(arr)
    return OperatorJet(float(v), g, h)


# ---------------------------------------------------------------------------
# structure conditions


@dataclass
class StructureReport:
    operator: str
    n: int
    samples: int
    min_grad: float
    max_hess_eig: float
    max_hess_eig_relative: float
    midpoint_violations: int
    diagonal_ray: list
    sup_estimate: float
    sup_boundary_estimate: float

    def as_dict(self):
        return {
            "operator": self.operator,
            "n": self.n,
            "samples": self.samples,
            "min_grad": self.min_grad,
            "max_hess_eig": self.max_hess_eig,
            "max_hess_eig_relative": self.max_hess_eig_relative,
            "midpoint_violations": self.midpoint_violations,
            "diagonal_ray": self.diagonal_ray,
            "sup_estimate": self.sup_estimate,
            "sup_boundary_estimate": self.sup_boundary_estimate,
        }


def sample_domain(op: OperatorSpec, count: int, rng, box: float = 10.0, margin: float = 0.0) -> np.ndarray:
    """Uniform samples from the box [-box, box]^n intersected with the domain.

    ``margin`` is a relative interior margin: kept points satisfy
    ``domain.margin(lam) > margin * (1 + |lam|)``.
    """
    out = []
    have = 0
    while have < count:
        cand = rng.uniform(-box, box, size=(max(4 * count, 64), op.n))
        keep = cand[op.domain.inside(cand, margin)]
        out.append(keep)
        have += len(keep)
    return np.concatenate(out)[:count]


def probe_boundary_sup(op: OperatorSpec, rng, count: int = 256, scales=(1.0, 10.0, 100.0, 1000.0), pull: float = 1e-12):
    """Estimate sup of f over the boundary of its cone by ray probing.

    Rays start on the diagonal s*(1,...,1) and run in random directions until
    they leave the cone; f is evaluated a relative distance ``pull`` inside the
    exit point.
    """
    cone = op.domain
    best = -math.inf
    for s in scales:
        start = np.full(op.n, s)
        d = rng.normal(size=(count, op.n))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        lo = np.zeros(count)
        hi = np.full(count, s)
        for _ in range(60):
            out = ~cone.inside(start + hi[:, None] * d)
            if out.all():
                break
            hi = np.where(out, hi, 2 * hi)
        out = ~cone.inside(start + hi[:, None] * d)
        lo, hi, d = lo[out], hi[out], d[out]
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            ins = cone.inside(start + mid[:, None] * d)
            lo = np.where(ins, mid, lo)
            hi = np.where(ins, hi, mid)
        pts = start + (lo * (1 - pull))[:, None] * d
        vals = op.value(pts)
        vals = vals[np.isfinite(vals)]
        if vals.size:
            best = max(best, float(vals.max()))
    return best


def check_structure(op: OperatorSpec, sample_count: int, seed=0, box: float = 10.0) -> StructureReport:
    """Sample the domain and report the monotonicity/concavity diagnostics."""
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    lam = sample_domain(op, sample_count, rng, box)
    v, g, h = op.jet(lam)
    eig = np.linalg.eigvalsh(h)
    scale = np.maximum(np.abs(eig).max(axis=-1), 1e-300)
    lam_b = sample_domain(op, sample_count, rng, box)
    mid = 0.5 * (lam + lam_b)
    fa, fb, fm = op.value(lam), op.value(lam_b), op.value(mid)
    slack = 1e-12 * (1 + np.abs(fa) + np.abs(fb))
    violations = int(np.count_nonzero(~(fm >= 0.5 * (fa + fb) - slack)))
    ts = 10.0 ** np.arange(0, 9)
    ray = op.value(ts[:, None] * np.ones(op.n))
    return StructureReport(
        operator=op.label,
        n=op.n,
        samples=sample_count,
        min_grad=float(g.min()),
        max_hess_eig=float(eig[..., -1].max()),
        max_hess_eig_relative=float((eig[..., -1] / scale).max()),
        midpoint_violations=violations,
        diagonal_ray=[[float(t), float(x)] for t, x in zip(ts, ray)],
        sup_estimate=float(np.nanmax(ray)),
        sup_boundary_estimate=probe_boundary_sup(op, rng),
    )
