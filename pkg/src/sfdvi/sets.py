"""Closed convex subsets of R^q with exact Euclidean projections.

The catalog covers boxes, the nonnegative orthant, balls, intersections of
halfspaces, transportation polytopes in stacked supply/demand/flow
coordinates, and finite products of those. Every set supports projection,
membership testing and polar-set membership. Parametrized families with a
known limit support probing the pointwise convergence of projections, the
computable consequence of set convergence in the Mosco sense.

Projections accept a single vector or an array of shape (..., dim) and are
evaluated in closed form where one exists. Intersections (halfspaces and
transportation polytopes) use Dykstra's alternating projections, which
converge to the exact nearest point rather than just a feasible one.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DYKSTRA_TOL = 1e-10
DEFAULT_DYKSTRA_SWEEPS = 10_000


class DimensionMismatch(ValueError):
    pass


class ProjectionBudgetError(RuntimeError):
    """Dykstra ran out of sweeps; carries the final sweep residual."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (final residual {residual:.3e})")
        self.residual = residual


def _as_batch(v, dim):
    """Return (flattened (P, dim) view, original shape) for broadcasting APIs."""
    v = np.asarray(v, dtype=float)
    if v.ndim == 0 or v.shape[-1] != dim:
        raise DimensionMismatch(f"expected trailing dimension {dim}, got shape {v.shape}")
    return v.reshape(-1, dim), v.shape


class ConvexSet:
    """Base class: a nonempty closed convex subset of R^dim."""

    dim: int
    is_cone: bool = False

    def project(self, v, tol=None, max_sweeps=None):
        raise NotImplementedError

    def contains(self, v, tol=0.0):
        raise NotImplementedError

    def support(self, y):
        """sup_{x in set} <x, y>, or None when no closed form is available."""
        return None

    def cone_generators(self):
        raise ValueError(f"{type(self).__name__} is not a cone from the catalog")

    def _check_dim(self, v):
        return _as_batch(v, self.dim)


class Box(ConvexSet):
    """Axis-aligned box {lo <= x <= hi}."""

    def __init__(self, lo, hi):
        self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if self.lo.shape != self.hi.shape or self.lo.ndim != 1:
            raise ValueError("lo and hi must be 1-d arrays of equal length")
        if not np.all(self.lo <= self.hi):
            raise ValueError("box requires lo <= hi componentwise")
        self.dim = self.lo.size

    def project(self, v, tol=None, max_sweeps=None):
        flat, shape = self._check_dim(v)
        return np.clip(flat, self.lo, self.hi).reshape(shape)

    def contains(self, v, tol=0.0):
        flat, shape = self._check_dim(v)
        ok = np.all((flat >= self.lo - tol) & (flat <= self.hi + tol), axis=-1)
        return ok.reshape(shape[:-1]) if shape[:-1] else bool(ok[0])

    def support(self, y):
        y = np.asarray(y, dtype=float)
        return float(np.sum(np.maximum(self.lo * y, self.hi * y)))


class NonnegOrthant(ConvexSet):
    """The cone {x >= 0}."""

    is_cone = True

    def __init__(self, dim):
        if dim < 1:
            raise ValueError("dimension must be positive")
        self.dim = int(dim)

    def project(self, v, tol=None, max_sweeps=None):
        flat, shape = self._check_dim(v)
        return np.maximum(flat, 0.0).reshape(shape)

    def contains(self, v, tol=0.0):
        flat, shape = self._check_dim(v)
        ok = np.all(flat >= -tol, axis=-1)
        return ok.reshape(shape[:-1]) if shape[:-1] else bool(ok[0])

    def support(self, y):
        y = np.asarray(y, dtype=float)
        return 0.0 if np.all(y <= 0.0) else np.inf

    def cone_generators(self):
        return np.eye(self.dim)


class Ball(ConvexSet):
    """Euclidean ball {||x - center|| <= radius}."""

    def __init__(self, center, radius):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.radius = float(radius)
        if self.radius <= 0.0:
            raise ValueError("radius must be positive")
        self.dim = self.center.size

    def project(self, v, tol=None, max_sweeps=None):
        flat, shape = self._check_dim(v)
        d = flat - self.center
        norms = np.linalg.norm(d, axis=-1, keepdims=True)
        scale = np.where(norms > self.radius, self.radius / np.maximum(norms, 1e-300), 1.0)
        return (self.center + d * scale).reshape(shape)

    def contains(self, v, tol=0.0):
        flat, shape = self._check_dim(v)
        ok = np.linalg.norm(flat - self.center, axis=-1) <= self.radius + tol
        return ok.reshape(shape[:-1]) if shape[:-1] else bool(ok[0])

    def support(self, y):
        y = np.asarray(y, dtype=float)
        return float(self.center @ y + self.radius * np.linalg.norm(y))


class HalfspaceIntersection(ConvexSet):
    """Intersection of halfspaces {<a_i, x> <= b_i}.

    Normals are stored unit-length so membership tolerances are Euclidean
    distances. Construction requires a strictly interior point, which
    certifies nonemptiness of the intersection.
    """

    def __init__(self, normals, offsets, interior_point):
        A = np.atleast_2d(np.asarray(normals, dtype=float))
        b = np.atleast_1d(np.asarray(offsets, dtype=float))
        if A.shape[0] != b.size:
            raise ValueError("one offset per normal required")
        norms = np.linalg.norm(A, axis=1)
        if np.any(norms == 0.0):
            raise ValueError("zero normal vector")
        self.normals = A / norms[:, None]
        self.offsets = b / norms
        self.dim = A.shape[1]
        x0 = np.asarray(interior_point, dtype=float)
        slack = self.offsets - self.normals @ x0
        if x0.shape != (self.dim,) or np.any(slack <= 0.0):
            raise ValueError("interior_point must satisfy every constraint strictly")
        self.interior_point = x0

    def project(self, v, tol=None, max_sweeps=None):
        tol = DEFAULT_DYKSTRA_TOL if tol is None else tol
        max_sweeps = DEFAULT_DYKSTRA_SWEEPS if max_sweeps is None else max_sweeps
        flat, shape = self._check_dim(v)
        x = flat.copy()
        corr = np.zeros((self.normals.shape[0],) + x.shape)
        for _ in range(max_sweeps):
            x_prev = x.copy()
            for i, (a, b) in enumerate(zip(self.normals, self.offsets)):
                z = x + corr[i]
                viol = np.maximum(z @ a - b, 0.0)
                x = z - viol[:, None] * a
                corr[i] = z - x
            res = np.abs(x - x_prev).max() if x.size else 0.0
            if res < tol:
                return x.reshape(shape)
        raise ProjectionBudgetError("Dykstra sweep budget exhausted", res)

    def contains(self, v, tol=0.0):
        flat, shape = self._check_dim(v)
        ok = np.all(flat @ self.normals.T <= self.offsets + tol, axis=-1)
        return ok.reshape(shape[:-1]) if shape[:-1] else bool(ok[0])


class TransportSet(ConvexSet):
    """Stacked transportation polytope in coordinates (A, B, C).

    A in R^m and B in R^n are the row and column sums of the nonnegative
    flow matrix C in R^{m x n}: A_i = sum_j C_ij and B_j = sum_i C_ij.
    Without a flow cap the set is a polyhedral cone; with ``cap`` the flows
    are additionally bounded, C_ij <= cap, giving a compact polytope.

    Projection alternates the closed-form projection onto the linear
    equality subspace with clipping of the flow block, combined through
    Dykstra so the limit is the exact nearest point.
    """

    def __init__(self, m, n, cap=None):
        if m < 1 or n < 1:
            raise ValueError("market counts must be positive")
        self.m = int(m)
        self.n = int(n)
        self.cap = None if cap is None else float(cap)
        if self.cap is not None and self.cap <= 0.0:
            raise ValueError("flow cap must be positive")
        self.dim = self.m + self.n + self.m * self.n
        self.is_cone = self.cap is None
        self._subspace = self._equality_projector()

    def _equality_projector(self):
        m, n, d = self.m, self.n, self.dim
        M = np.zeros((m + n, d))
        for i in range(m):
            M[i, i] = 1.0
            M[i, m + n + i * n:m + n + (i + 1) * n] = -1.0
        for j in range(n):
            M[m + j, m + j] = 1.0
            M[m + j, m + n + j:d:n] = -1.0
        return np.eye(d) - M.T @ np.linalg.solve(M @ M.T, M)

    def split(self, v):
        """Return views (A, B, C) of stacked coordinates, C as (..., m, n)."""
        v = np.asarray(v, dtype=float)
        m, n = self.m, self.n
        A = v[..., :m]
        B = v[..., m:m + n]
        C = v[..., m + n:].reshape(v.shape[:-1] + (m, n))
        return A, B, C

    def project(self, v, tol=None, max_sweeps=None):
        tol = DEFAULT_DYKSTRA_TOL if tol is None else tol
        max_sweeps = DEFAULT_DYKSTRA_SWEEPS if max_sweeps is None else max_sweeps
        flat, shape = self._check_dim(v)
        hi = np.inf if self.cap is None else self.cap
        cs = slice(self.m + self.n, self.dim)
        x = flat.copy()
        corr = np.zeros_like(flat)  # dual increment for the clip step only
        for _ in range(max_sweeps):
            x_prev = x.copy()
            y = x @ self._subspace.T
            z = y + corr
            x = z.copy()
            x[:, cs] = np.clip(z[:, cs], 0.0, hi)
            corr = z - x
            res = np.abs(x - x_prev).max() if x.size else 0.0
            if res < tol:
                return x.reshape(shape)
        raise ProjectionBudgetError("Dykstra sweep budget exhausted", res)

    def contains(self, v, tol=0.0):
        flat, shape = self._check_dim(v)
        A, B, C = self.split(flat)
        ok = (
            np.all(C >= -tol, axis=(-2, -1))
            & np.all(np.abs(A - C.sum(axis=-1)) <= tol, axis=-1)
            & np.all(np.abs(B - C.sum(axis=-2)) <= tol, axis=-1)
        )
        if self.cap is not None:
            ok &= np.all(C <= self.cap + tol, axis=(-2, -1))
        return ok.reshape(shape[:-1]) if shape[:-1] else bool(ok[0])

    def cone_generators(self):
        if not self.is_cone:
            raise ValueError("capped transportation set is not a cone")
        if self.m > 4 or self.n > 4:
            raise ValueError("extreme-ray enumeration only shipped for m, n <= 4")
        rays = []
        for i in range(self.m):
            for j in range(self.n):
                g = np.zeros(self.dim)
                g[i] = 1.0
                g[self.m + j] = 1.0
                g[self.m + self.n + i * self.n + j] = 1.0
                rays.append(g)
        return np.array(rays)


class Product(ConvexSet):
    """Cartesian product of catalog sets, stacked along the last axis."""

    def __init__(self, factors):
        if not factors:
            raise ValueError("product of no factors")
        self.factors = list(factors)
        self.dim = sum(f.dim for f in self.factors)
        self.is_cone = all(f.is_cone for f in self.factors)
        offs = np.cumsum([0] + [f.dim for f in self.factors])
        self._slices = [slice(a, b) for a, b in zip(offs[:-1], offs[1:])]

    def project(self, v, tol=None, max_sweeps=None):
        flat, shape = self._check_dim(v)
        out = np.empty_like(flat)
        for f, s in zip(self.factors, self._slices):
            out[:, s] = f.project(flat[:, s], tol=tol, max_sweeps=max_sweeps)
        return out.reshape(shape)

    def contains(self, v, tol=0.0):
        flat, shape = self._check_dim(v)
        ok = np.ones(flat.shape[0], dtype=bool)
        for f, s in zip(self.factors, self._slices):
            ok &= np.atleast_1d(f.contains(flat[:, s], tol=tol))
        return ok.reshape(shape[:-1]) if shape[:-1] else bool(ok[0])

    def support(self, y):
        y = np.asarray(y, dtype=float)
        total = 0.0
        for f, s in zip(self.factors, self._slices):
            part = f.support(y[s])
            if part is None:
                return None
            total += part
        return float(total)

    def cone_generators(self):
        gens = []
        for f, s in zip(self.factors, self._slices):
            for g in f.cone_generators():
                full = np.zeros(self.dim)
                full[s] = g
                gens.append(full)
        return np.array(gens)


def project(cset, v, tol=None, max_sweeps=None):
    """Nearest point of ``cset`` to ``v`` in the Euclidean norm.

    Satisfies the variational characterization
    <v - P(v), z - P(v)> <= 0 for every z in the set.
    """
    return cset.project(v, tol=tol, max_sweeps=max_sweeps)


def contains(cset, v, tol=0.0):
    """True iff every defining constraint of ``cset`` holds up to ``tol``."""
    if tol < 0:
        raise ValueError("tolerance must be nonnegative")
    return cset.contains(v, tol=tol)


def distance(cset, v):
    """Euclidean distance from ``v`` to ``cset``."""
    return float(np.linalg.norm(np.asarray(v, dtype=float) - cset.project(v)))


def _support_by_ascent(cset, y, unbounded_cutoff=1e6, max_iter=20_000, stat_tol=1e-11):
    """Estimate sup <x, y> over a set without a closed-form support function.

    Projected-gradient ascent of the linear objective. The run either
    certifies a stationary point (residual below ``stat_tol`` at unit step)
    or certifies unboundedness (for cones, any feasible point with positive
    objective spans an unbounded ray; otherwise growth past the cutoff).
    """
    y = np.asarray(y, dtype=float)
    ynorm = np.linalg.norm(y)
    if ynorm == 0.0:
        return 0.0
    step = 1.0 / ynorm
    x = cset.project(np.zeros(cset.dim))
    scale = 1.0 + ynorm
    for _ in range(max_iter):
        x_next = cset.project(x + step * y)
        obj = float(x_next @ y)
        if cset.is_cone and obj > stat_tol * scale:
            return np.inf
        if obj > unbounded_cutoff:
            return np.inf
        residual = np.linalg.norm(x_next - x)
        x = x_next
        if residual <= stat_tol * (1.0 + np.linalg.norm(x)):
            return obj
    raise ProjectionBudgetError("support-function ascent did not certify stationarity", residual)


def polar_contains(cset, y, tol=1e-9):
    """True iff ``y`` lies in the polar set, i.e. sup_{x in set} <x, y> <= 1 + tol.

    Requires the set to contain the origin (then the polar is well behaved
    and the double polar recovers the set itself).
    """
    if not cset.contains(np.zeros(cset.dim), tol=1e-9):
        raise ValueError("polar membership is only defined for sets containing the origin")
    y = np.asarray(y, dtype=float)
    if y.shape != (cset.dim,):
        raise DimensionMismatch(f"expected shape ({cset.dim},), got {y.shape}")
    if isinstance(cset, NonnegOrthant):
        return bool(np.all(y <= tol))
    sup = cset.support(y)
    if sup is None:
        sup = _support_by_ascent(cset, y)
    if np.isinf(sup):
        return bool(np.all(y == 0.0))
    return bool(sup <= 1.0 + tol)


class SetFamily:
    """A parametrized family of sets with a declared limit.

    ``parameter_to_set`` maps a real parameter vector to a catalog set,
    ``sequence`` maps an index n to the parameter of the n-th member, and
    ``limit_set`` is the set the family converges to. Every member must
    contain the origin and share the ambient dimension; both are spot
    checked at construction on the first few members.
    """

    def __init__(self, parameter_to_set, limit_set, sequence):
        self.parameter_to_set = parameter_to_set
        self.limit_set = limit_set
        self.sequence = sequence
        origin = np.zeros(limit_set.dim)
        if not limit_set.contains(origin, tol=1e-12):
            raise ValueError("limit set must contain the origin")
        for n in (1, 2, 3):
            member = self.set_at(n)
            if member.dim != limit_set.dim:
                raise ValueError("family members must share the ambient dimension")
            if not member.contains(origin, tol=1e-12):
                raise ValueError("every family member must contain the origin")

    def set_at(self, n):
        return self.parameter_to_set(self.sequence(n))


def mosco_probe(family, n, probes):
    """Worst projection gap between the n-th member and the limit set.

    Returns max_v ||P_{K_n}(v) - P_{K_limit}(v)|| over the probe points,
    the finite-dimensional quantity whose decay certifies the projection
    convergence implied by set convergence in the Mosco sense.
    """
    probes = [np.asarray(v, dtype=float) for v in probes]
    if not probes:
        raise ValueError("probe list must be nonempty")
    member = family.set_at(n)
    gap = 0.0
    for v in probes:
        gap = max(gap, float(np.linalg.norm(member.project(v) - family.limit_set.project(v))))
    return gap
