"""Level sets {f > sigma} and their tangent cone at infinity.

Boundary points of a level set are located two ways:

* `boundary_point` follows a ray from an interior anchor to its first
  crossing of ``f = sigma``.
* `shell_samples` places points at a prescribed radius: on the sphere
  ``|lam| = R`` it bisects along the great-circle arc from ``-R e`` to
  ``+R e`` (``e`` the unit diagonal) through a direction ``theta`` orthogonal
  to ``e``. The far endpoint lies deep inside the level set and the near one
  outside every cone, so each arc crosses the boundary.

All verdicts derived from shell samples are sampling statements; near the
boundary of the tangent cone they may honestly come back inconclusive.
"""

from __future__ import annotations

import csv
import functools
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm, qmc

from .errors import HypothesisFailed, OutsideCone, RayStaysInside
from .symfun import LambdaVec, OperatorSpec

DEFAULT_SHELLS = (10.0, 100.0, 1000.0)
BISECT_ITERS = 200
LEVEL_RTOL = 1e-11


@dataclass(frozen=True)
class LevelSetHandle:
    """The superlevel set {lam in Gamma : f(lam) > sigma} with an interior anchor."""

    op: OperatorSpec
    sigma: float
    anchor: tuple

    @classmethod
    def build(cls, op: OperatorSpec, sigma: float | None = None, anchor=None) -> "LevelSetHandle":
        """Validate ``sigma`` against the sup bounds and pick an anchor.

        Without an explicit level, ``sigma = f(1, ..., 1)`` (shifted into range
        for ``sum_arctan``). Without an anchor, the diagonal ray is probed for
        its crossing ``t*`` and the anchor is ``2 t* (1, ..., 1)``.
        """
        lo, hi = op.sup_bounds()
        if sigma is None:
            if op.family == "sum_arctan":
                sigma = (2 * op.n - 1) * math.pi / 4
            else:
                sigma = float(op.value(np.ones(op.n)))
        sigma = float(sigma)
        if lo is None:
            from .symfun import probe_boundary_sup

            lo = probe_boundary_sup(op, np.random.default_rng(0))
        if not lo < sigma < hi:
            raise ValueError(f"level {sigma} violates sup_boundary f = {lo} < sigma < sup f = {hi}")
        t_cross = _diagonal_crossing(op, sigma)
        if anchor is None:
            anchor = np.full(op.n, 2.0 * t_cross)
        anchor = np.asarray(anchor, dtype=float)
        if anchor.shape != (op.n,):
            raise ValueError("anchor dimension mismatch")
        if not (op.domain.inside(anchor) and op.value(anchor) > sigma):
            raise ValueError(f"anchor {anchor} is not inside the level set")
        return cls(op, sigma, tuple(anchor.tolist()))

    def anchor_array(self) -> np.ndarray:
        return np.array(self.anchor)

    def inside(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        with np.errstate(invalid="ignore"):
            return self.op.domain.inside(lam) & (self.op.value(lam) > self.sigma)

    def rescaled(self, sigma: float):
        """Return (handle at level ``sigma``, scale s) with level set = s * self's.

        Only available for homogeneous families, where level sets are
        dilations of one another.
        """
        hom = self.op.homogeneity
        if hom is None:
            raise ValueError(f"{self.op.label} is not homogeneous")
        kind, c = hom
        if kind == "linear":
            if sigma <= 0 or self.sigma <= 0:
                raise ValueError("linear rescaling needs positive levels")
            s = sigma / self.sigma
        else:
            s = math.exp((sigma - self.sigma) / c)
        return LevelSetHandle(self.op, float(sigma), tuple((s * self.anchor_array()).tolist())), s


def _diagonal_crossing(op: OperatorSpec, sigma: float) -> float:
    one = np.ones(op.n)
    hi = 1.0
    for _ in range(200):
        if op.value(hi * one) > sigma:
            break
        hi *= 2.0
    else:
        raise ValueError(f"diagonal ray never exceeds level {sigma}; sup f <= sigma")
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        v = op.value(mid * one)
        if np.isfinite(v) and v > sigma:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-15 * hi:
            break
    return hi


# ---------------------------------------------------------------------------
# single boundary points


@dataclass(frozen=True)
class BoundaryPoint:
    point: np.ndarray
    normal: np.ndarray
    t: float
    degenerate: bool = False

    @property
    def lam(self) -> LambdaVec:
        return LambdaVec(self.point)


def unit_normal(op: OperatorSpec, lam) -> np.ndarray:
    g = op.grad(np.asarray(lam, dtype=float))
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


def boundary_point(ls: LevelSetHandle, direction, t_max: float | None = None, strict: bool = False) -> BoundaryPoint:
    """First crossing of ``f = sigma`` along ``anchor + t * direction``.

    If the ray leaves the cone before reaching the level, the last admissible
    point is returned with ``degenerate=True`` (or `OutsideCone` is raised
    when ``strict``).
    """
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    a = ls.anchor_array()
    scale = 1.0 + np.linalg.norm(a)
    if t_max is None:
        t_max = 1e8 * scale
    t_in, t = 0.0, 1e-3 * scale
    while ls.inside(a + t * d):
        t_in = t
        t *= 2.0
        if t > t_max:
            raise RayStaysInside(f"ray stays in the level set up to t = {t_max:g}")
    lo, hi = t_in, t
    tol = LEVEL_RTOL * (1.0 + abs(ls.sigma))
    for _ in range(BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        if ls.inside(a + mid * d):
            lo = mid
        else:
            hi = mid
        v = ls.op.value(a + lo * d)
        if abs(v - ls.sigma) <= tol or hi - lo <= 4 * np.spacing(hi):
            break
    p = a + lo * d
    degenerate = not abs(float(ls.op.value(p)) - ls.sigma) <= max(tol, 1e-8 * (1 + abs(ls.sigma)))
    if degenerate and strict:
        raise OutsideCone("ray left the cone before reaching the level set boundary")
    return BoundaryPoint(p, unit_normal(ls.op, p), lo, degenerate)


# ---------------------------------------------------------------------------
# radius shells


def orthogonal_directions(n: int, count: int, seed=0) -> np.ndarray:
    """Quasi-uniform unit vectors orthogonal to (1, ..., 1), deduplicated."""
    sob = qmc.Sobol(d=n, scramble=True, seed=seed)
    pts = sob.random_base2(max(1, math.ceil(math.log2(max(count, 2)))))[:count]
    z = norm.ppf(np.clip(pts, 1e-12, 1 - 1e-12))
    z -= z.mean(axis=1, keepdims=True)
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    _, idx = np.unique(np.round(z, 12), axis=0, return_index=True)
    return z[np.sort(idx)]


@dataclass
class ShellSamples:
    """Boundary points on a ladder of spheres |lam| = R.

    ``lam`` has shape (S, K, n); entry [s, k] uses the same direction (and
    permutation) on every shell so samples can be followed outward.
    """

    radii: np.ndarray
    lam: np.ndarray
    valid: np.ndarray
    value: np.ndarray
    grad: np.ndarray

    @property
    def normal(self) -> np.ndarray:
        return self.grad / np.linalg.norm(self.grad, axis=-1, keepdims=True)


def _arc_bisect(ls: LevelSetHandle, radius: float, theta: np.ndarray, iters: int = 64) -> tuple:
    n = theta.shape[1]
    e = np.full(n, 1.0 / math.sqrt(n))
    if not ls.inside(radius * e):
        return np.full(theta.shape, np.nan), np.zeros(len(theta), bool)
    lo = np.full(len(theta), -math.pi / 2)
    hi = np.full(len(theta), math.pi / 2)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        pts = radius * (np.cos(mid)[:, None] * theta + np.sin(mid)[:, None] * e)
        ins = ls.inside(pts)
        hi = np.where(ins, mid, hi)
        lo = np.where(ins, lo, mid)
    pts = radius * (np.cos(hi)[:, None] * theta + np.sin(hi)[:, None] * e)
    ok = ls.inside(pts)
    return pts, ok


@functools.lru_cache(maxsize=64)
def _cached_shells(ls, radii, count, seed, symmetrize):
    theta = orthogonal_directions(ls.op.n, count, seed)
    pts, ok = [], []
    for r in radii:
        p, v = _arc_bisect(ls, r, theta)
        pts.append(p)
        ok.append(v)
    lam = np.stack(pts)
    valid = np.stack(ok)
    if symmetrize and ls.op.n <= 5:
        perms = list(itertools.permutations(range(ls.op.n)))[1:]
        lam = np.concatenate([lam] + [lam[..., list(p)] for p in perms], axis=1)
        valid = np.concatenate([valid] * (len(perms) + 1), axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        value, grad, _ = ls.op.jet(np.where(valid[..., None], lam, 1.0), hessian=False)
    return ShellSamples(np.array(radii), lam, valid, value, grad)


def shell_samples(ls: LevelSetHandle, radii=DEFAULT_SHELLS, count: int | None = None, seed=0, symmetrize=True) -> ShellSamples:
    """Boundary samples of the level set on each sphere |lam| = R.

    ``count`` quasi-uniform base directions (default 512 n) are used; with
    ``symmetrize`` every sample is also permuted in all n! ways (n <= 5), which
    makes every downstream verdict permutation invariant.
    """
    if count is None:
        count = 512 * ls.op.n
    radii = tuple(float(r) for r in sorted(radii))
    return _cached_shells(ls, radii, int(count), seed, bool(symmetrize))


# ---------------------------------------------------------------------------
# tangent cone at infinity


@dataclass
class CplusVerdict:
    status: str  # "in" | "out" | "inconclusive"
    epsilon: float | None = None
    radius: float | None = None
    witness: np.ndarray | None = None
    shell_min_margin: list = field(default_factory=list)


def cplus_margins(samples: ShellSamples, mu) -> np.ndarray:
    """(sum_i f_i (mu_i - lam_i)) / (sum_i f_i + 1) for every sample."""
    mu = np.asarray(mu, dtype=float)
    g = samples.grad
    num = g @ mu - np.einsum("...i,...i->...", g, samples.lam)
    out = num / (g.sum(axis=-1) + 1.0)
    return np.where(samples.valid, out, np.nan)


def membership_cplus(ls: LevelSetHandle, mu, radii=DEFAULT_SHELLS, count: int | None = None, seed=0, tol: float = 1e-9) -> CplusVerdict:
    """Sampled test of mu against the tangent cone at infinity.

    ``in(eps, R)`` when for some shell radius R every sample on shells >= R
    satisfies ``sum f_i (mu_i - lam_i) >= eps (sum f_i + 1)``; eps is half the
    smallest observed margin. ``out`` when a violation at least ``tol`` deep
    on the largest shell also violates on the previous shell.
    """
    samples = shell_samples(ls, radii, count, seed)
    margins = cplus_margins(samples, mu)
    per_shell = [float(np.nanmin(m)) if np.any(np.isfinite(m)) else math.nan for m in margins]
    for s, r in enumerate(samples.radii):
        tail = margins[s:]
        if not np.any(np.isfinite(tail)):
            continue
        lo = float(np.nanmin(tail))
        if lo > tol:
            return CplusVerdict("in", 0.5 * lo, float(r), None, per_shell)
    last = margins[-1]
    if len(margins) >= 2:
        persistent = (last <= -tol) & (margins[-2] <= -tol)
    else:
        persistent = last <= -tol
    if np.any(persistent):
        k = int(np.nanargmin(np.where(persistent, last, np.nan)))
        return CplusVerdict("out", None, None, samples.lam[-1, k].copy(), per_shell)
    return CplusVerdict("inconclusive", None, None, None, per_shell)


@dataclass
class NormalCluster:
    pattern: tuple
    size: int
    nonzero: int
    mean_normal: np.ndarray
    shrinking: bool


@dataclass
class RankEstimate:
    rank: int
    normal_clusters: list
    radius: float
    zero_threshold: float


def estimate_rank(ls: LevelSetHandle, escape_directions: int | None = None, zero_threshold: float = 1e-3, radii=DEFAULT_SHELLS, seed=0) -> RankEstimate:
    """Minimum number of non-negligible entries among far-field unit normals.

    Normals on the outermost shell are grouped by zero pattern
    (|nu_i| < zero_threshold). Each cluster records whether its flagged entries
    shrank relative to the previous shell, the sanity check that the pattern is
    asymptotic rather than an artefact of the threshold.
    """
    n = ls.op.n
    if escape_directions is None:
        escape_directions = 512 * n
    if escape_directions < 2 * n:
        raise ValueError("escape_directions must be >= 2n")
    samples = shell_samples(ls, radii, escape_directions, seed)
    nu = np.abs(samples.normal)
    shells = np.flatnonzero(samples.valid.any(axis=1))
    if shells.size == 0:
        raise ValueError("no boundary samples on any shell")
    s = shells[-1]
    prev = shells[-2] if shells.size >= 2 else None
    ok = samples.valid[s]
    zero = nu[s] < zero_threshold
    clusters = []
    for pattern in np.unique(zero[ok], axis=0):
        members = ok & np.all(zero == pattern, axis=1)
        flagged = pattern.astype(bool)
        shrinking = True
        if flagged.any() and prev is not None:
            both = members & samples.valid[prev]
            if both.any():
                now = nu[s][both][:, flagged].max(axis=1)
                before = nu[prev][both][:, flagged].max(axis=1)
                shrinking = bool(np.median(now) < np.median(before))
        clusters.append(
            NormalCluster(
                pattern=tuple(bool(x) for x in ~pattern),
                size=int(members.sum()),
                nonzero=int((~pattern).sum()),
                mean_normal=samples.normal[s][members].mean(axis=0),
                shrinking=shrinking,
            )
        )
    rank = min(c.nonzero for c in clusters)
    return RankEstimate(rank, clusters, float(samples.radii[s]), zero_threshold)


def degenerate_planes(ls: LevelSetHandle, radii=DEFAULT_SHELLS, count: int | None = None, seed=0, zero_threshold: float = 1e-3):
    """Asymptotic supporting planes whose normal lies on the boundary of Gamma_n.

    Returns ``(normals, offsets)``: normals are the outer-shell unit normals
    with sub-threshold entries snapped to zero, offsets are ``lim nu . lam``
    extrapolated from the two outermost shells assuming O(1/R) decay.
    """
    samples = shell_samples(ls, radii, count, seed)
    nu = samples.normal
    c = np.einsum("...i,...i->...", nu, samples.lam)
    shells = np.flatnonzero(samples.valid.any(axis=1))
    s = shells[-1]
    deg = samples.valid[s] & np.any(np.abs(nu[s]) < zero_threshold, axis=1)
    if not deg.any():
        return np.zeros((0, ls.op.n)), np.zeros(0)
    snapped = np.where(np.abs(nu[s]) < zero_threshold, 0.0, nu[s])[deg]
    snapped /= np.linalg.norm(snapped, axis=1, keepdims=True)
    offset = c[s][deg]
    if shells.size >= 2:
        p = shells[-2]
        r1, r2 = samples.radii[p], samples.radii[s]
        both = samples.valid[p][deg]
        rich = (r2 * c[s][deg] - r1 * c[p][deg]) / (r2 - r1)
        offset = np.where(both, rich, offset)
    key = np.round(np.column_stack([snapped, offset]), 9)
    _, idx = np.unique(key, axis=0, return_index=True)
    idx = np.sort(idx)
    return snapped[idx], offset[idx]


@dataclass
class CtildeVerdict:
    status: str  # "in" | "out" | "equals_Rn"
    margin: float
    plane_normal: np.ndarray | None = None
    plane_offset: float | None = None


def membership_ctilde(ls: LevelSetHandle, mu, radii=DEFAULT_SHELLS, count: int | None = None, seed=0, zero_threshold: float = 1e-3, tol: float = 1e-7) -> CtildeVerdict:
    """Test mu against the region cut out by the degenerate supporting planes."""
    normals, offsets = degenerate_planes(ls, radii, count, seed, zero_threshold)
    mu = np.asarray(mu, dtype=float)
    if len(offsets) == 0:
        return CtildeVerdict("equals_Rn", math.inf)
    margins = normals @ mu - offsets
    k = int(np.argmin(margins))
    m = float(margins[k])
    status = "in" if m > tol * (1.0 + np.linalg.norm(mu)) else "out"
    return CtildeVerdict(status, m, normals[k], float(offsets[k]))


def ctilde_margins(ls: LevelSetHandle, mus: np.ndarray, radii=DEFAULT_SHELLS, count: int | None = None, seed=0, zero_threshold: float = 1e-3) -> np.ndarray:
    """Vectorised plane margins for many mu at once (+inf when C~ = R^n)."""
    normals, offsets = degenerate_planes(ls, radii, count, seed, zero_threshold)
    mus = np.asarray(mus, dtype=float)
    if len(offsets) == 0:
        return np.full(mus.shape[:-1], math.inf)
    out = np.full(mus.shape[:-1], math.inf)
    flat = mus.reshape(-1, mus.shape[-1])
    res = out.reshape(-1)
    for start in range(0, len(flat), 4096):
        chunk = flat[start : start + 4096]
        res[start : start + 4096] = (chunk @ normals.T - offsets).min(axis=1)
    return res.reshape(mus.shape[:-1])


# ---------------------------------------------------------------------------
# dichotomy and the h_mu profile


@dataclass
class DichotomyWitness:
    delta: float
    epsilon: float
    radius_max: float
    samples_checked: int
    violations: int
    shell_rows: list = field(default_factory=list)


def branch_margins(samples: ShellSamples, mu):
    """Per-sample (min_k f_k / sum f, sum f_i (mu_i - lam_i) / sum f)."""
    mu = np.asarray(mu, dtype=float)
    g = samples.grad
    total = g.sum(axis=-1)
    m1 = g.min(axis=-1) / total
    m2 = (g @ mu - np.einsum("...i,...i->...", g, samples.lam)) / total
    return np.where(samples.valid, m1, np.nan), np.where(samples.valid, m2, np.nan)


def refine_ladder(radii, per_decade: int = 8) -> tuple:
    """Insert geometrically spaced radii between consecutive ladder rungs."""
    radii = sorted(float(r) for r in radii)
    out = [radii[0]]
    for a, b in zip(radii, radii[1:]):
        steps = max(1, math.ceil(per_decade * math.log10(b / a)))
        out.extend(a * (b / a) ** (j / steps) for j in range(1, steps + 1))
    return tuple(out)


def dichotomy_witness(ls: LevelSetHandle, mu, shells=DEFAULT_SHELLS, count: int | None = None, seed=0, check_hypothesis: bool = True, per_decade: int = 8) -> DichotomyWitness:
    """Constants (delta, eps) such that each boundary sample has either
    min_k f_k >= delta sum f or sum f_i (mu_i - lam_i) >= eps sum f.

    Samples are taken on the shell ladder refined to ``per_decade`` radii per
    decade. Each sample is assigned to its larger branch; delta and eps are
    half the smallest margin within each branch.
    """
    if check_hypothesis:
        verdict = membership_ctilde(ls, mu, shells, count, seed)
        if verdict.status == "out":
            raise HypothesisFailed(f"mu = {list(mu)} is not in the extended tangent cone (margin {verdict.margin:.3g})")
    samples = shell_samples(ls, refine_ladder(shells, per_decade) if per_decade else shells, count, seed)
    m1, m2 = branch_margins(samples, mu)
    ok = samples.valid
    first = ok & (m1 >= m2)
    second = ok & (m1 < m2)

    def half_min(values, mask, fallback):
        if mask.any():
            return 0.5 * float(values[mask].min())
        return 0.5 * float(fallback[ok].min()) if ok.any() else math.nan

    delta = half_min(m1, first, m1)
    eps = half_min(m2, second, m2)
    violations = int(np.count_nonzero(ok & (np.fmax(m1, m2) <= 0)))
    rows = []
    for s, r in enumerate(samples.radii):
        okr = ok[s]
        if not okr.any():
            continue
        f1, f2 = first[s], second[s]
        rows.append(
            {
                "radius": float(r),
                "samples": int(okr.sum()),
                "delta": 0.5 * float(m1[s][f1].min()) if f1.any() else math.nan,
                "epsilon": 0.5 * float(m2[s][f2].min()) if f2.any() else math.nan,
                "branch1": int(f1.sum()),
                "branch2": int(f2.sum()),
            }
        )
    radius_max = float(samples.radii[ok.any(axis=1)].max()) if ok.any() else math.nan
    return DichotomyWitness(delta, eps, radius_max, int(ok.sum()), violations, rows)


@dataclass
class HProfile:
    rows: list
    nondecreasing: bool


def _segment_entry(ls, lam, mu, iters=100):
    """t_lambda = min{t >= 0 : t lam + (1-t) mu in the closed level set}."""
    tol = 1e-10 * (1.0 + abs(ls.sigma))

    def closed(t):
        p = t[:, None] * lam + (1 - t)[:, None] * mu
        with np.errstate(invalid="ignore"):
            v = ls.op.value(p)
        return ls.op.domain.inside(p) & (v >= ls.sigma - tol)

    k = len(lam)
    at0 = closed(np.zeros(k))
    lo, hi = np.zeros(k), np.ones(k)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        c = closed(mid)
        hi = np.where(c, mid, hi)
        lo = np.where(c, lo, mid)
    return np.where(at0, 0.0, hi)


def _golden_max(fun, a, b, iters=90):
    a0, b0 = a, b
    inv = (math.sqrt(5) - 1) / 2
    c = b - inv * (b - a)
    d = a + inv * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        left = fc >= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        d_new = np.where(left, c, a + inv * (b - a))
        c_new = np.where(left, b - inv * (b - a), d)
        fd_new = np.where(left, fc, np.nan)
        fc_new = np.where(left, np.nan, fd)
        need_c = left
        c, d = c_new, d_new
        fc = np.where(need_c, fun(c), fc_new)
        fd = np.where(need_c, fd_new, fun(d))
    t = 0.5 * (a + b)
    best = np.fmax(np.fmax(fun(t), fun(a)), fun(b))
    return np.fmax(best, np.fmax(fun(a0), fun(b0)))


def h_mu_profile(ls: LevelSetHandle, mu, radii, count: int | None = None, seed=0) -> HProfile:
    """Tabulate h_mu(r) = min over A on |lam| = r of sup_t f(t lam + (1-t) mu) - sigma.

    A is the set of samples satisfying the second dichotomy branch with the
    witness epsilon computed on the same radii. Whether h_mu is nondecreasing
    is recorded, never asserted.
    """
    mu = np.asarray(mu, dtype=float)
    witness = dichotomy_witness(ls, mu, radii, count, seed)
    samples = shell_samples(ls, radii, count, seed)
    _, m2 = branch_margins(samples, mu)
    eps = witness.epsilon if np.isfinite(witness.epsilon) else 0.0
    rows = []
    for s, r in enumerate(samples.radii):
        in_a = samples.valid[s] & (m2[s] >= eps)
        if not in_a.any():
            rows.append({"r": float(r), "h": math.nan, "count": 0, "argmin": None})
            continue
        lam = samples.lam[s][in_a]
        t_lo = _segment_entry(ls, lam, mu)

        def along(t, lam=lam):
            p = t[:, None] * lam + (1 - t)[:, None] * mu
            with np.errstate(invalid="ignore"):
                v = ls.op.value(p)
            return np.where(np.isfinite(v), v, -np.inf)

        sup = _golden_max(along, t_lo, np.ones(len(lam))) - ls.sigma
        k = int(np.argmin(sup))
        rows.append({"r": float(r), "h": float(sup[k]), "count": int(in_a.sum()), "argmin": lam[k].tolist()})
    hs = [row["h"] for row in rows if np.isfinite(row["h"])]
    nondecreasing = all(b >= a - 1e-12 for a, b in zip(hs, hs[1:]))
    return HProfile(rows, nondecreasing)


# ---------------------------------------------------------------------------
# CSV output


def write_samples_csv(path, samples: ShellSamples, mu=None) -> int:
    """One row per valid boundary sample: radius, lambda, normal, branch margins."""
    n = samples.lam.shape[-1]
    if mu is None:
        m1 = m2 = np.full(samples.valid.shape, np.nan)
    else:
        m1, m2 = branch_margins(samples, mu)
    nu = samples.normal
    header = ["radius"] + [f"lambda_{i}" for i in range(n)] + [f"nu_{i}" for i in range(n)] + ["m1", "m2"]
    rows = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for s, r in enumerate(samples.radii):
            for k in np.flatnonzero(samples.valid[s]):
                w.writerow([repr(float(r))] + [repr(float(x)) for x in samples.lam[s, k]] + [repr(float(x)) for x in nu[s, k]] + [repr(float(m1[s, k])), repr(float(m2[s, k]))])
                rows += 1
    return rows


def write_profile_csv(path, profile: HProfile) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "h", "count"])
        for row in profile.rows:
            w.writerow([repr(row["r"]), repr(row["h"]), row["count"]])
