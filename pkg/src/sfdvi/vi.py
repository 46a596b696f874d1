"""Pointwise variational inequality solver.

Solves VI(K, F(t, x, .)): find u in K with <F(t, x, u), v - u> >= 0 for all
v in K, by the contractive fixed-point iteration

    u <- P_K(u - rho * F(t, x, u)),

which is a contraction with factor sqrt(1 - 2*rho*c_bar + rho^2*l_f^2)
whenever rho lies in the open interval (0, 2*c_bar/l_f^2). Here c_bar is
the strong-monotonicity modulus of F in u (in the squared form
<F(u1)-F(u2), u1-u2> >= c_bar*||u1-u2||^2) and l_f the joint Lipschitz
modulus ||F(x1,u1)-F(x2,u2)|| <= l_f*(||x1-x2|| + ||u1-u2||).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np


class VISolveError(RuntimeError):
    """Fixed-point iteration failed; carries the last residual and iterates."""

    def __init__(self, message, residual=None, iters=None):
        super().__init__(message)
        self.residual = residual
        self.iters = iters


@dataclass(frozen=True)
class VIKernel:
    """The mapping part of a VI: F plus its monotonicity/Lipschitz moduli."""

    F_eval: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    c_bar: float
    l_f: float

    def __post_init__(self):
        if self.c_bar <= 0.0 or self.l_f <= 0.0:
            raise ValueError("moduli must be positive")
        if self.c_bar > self.l_f * (1.0 + 1e-12):
            raise ValueError("c_bar cannot exceed l_f")


@dataclass(frozen=True)
class VIProblem:
    """A constraint set together with the mapping F(t, x, u) and its moduli."""

    cset: "ConvexSet"
    F_eval: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    c_bar: float
    l_f: float

    def __post_init__(self):
        if self.c_bar <= 0.0 or self.l_f <= 0.0:
            raise ValueError("moduli must be positive")
        if self.c_bar > self.l_f * (1.0 + 1e-12):
            raise ValueError("c_bar cannot exceed l_f")

    @classmethod
    def from_kernel(cls, cset, kernel):
        return cls(cset=cset, F_eval=kernel.F_eval, c_bar=kernel.c_bar, l_f=kernel.l_f)

    def rho_interval(self):
        return 0.0, 2.0 * self.c_bar / self.l_f**2


@dataclass(frozen=True)
class SolverConfig:
    """Step size, stopping rule and start point for the fixed-point iteration.

    ``rho=None`` selects the minimizer of the contraction factor. The
    stopping rule uses the successive-iterate distance, which converts to a
    natural-map residual bound of tol*(1 + rho*l_f) at the returned point.
    """

    rho: float | None = None
    tol: float = 1e-10
    max_iter: int = 10_000
    u_init: np.ndarray | str = "origin"

    def resolve_rho(self, problem):
        rho = optimal_rho(problem.c_bar, problem.l_f) if self.rho is None else self.rho
        lo, hi = problem.rho_interval()
        if not (lo < rho < hi):
            raise ValueError(f"rho={rho} outside the admissible interval ({lo}, {hi})")
        return rho


class VISolution(NamedTuple):
    u: np.ndarray
    iters: int
    residual: float


def contraction_factor(rho, c_bar, l_f):
    """Per-iteration contraction factor sqrt(1 - 2*rho*c_bar + rho^2*l_f^2).

    Strictly below one exactly when rho lies in (0, 2*c_bar/l_f^2).
    """
    radicand = 1.0 - 2.0 * rho * c_bar + rho**2 * l_f**2
    if radicand < 0.0:
        raise ValueError(f"negative radicand {radicand}: inconsistent moduli (need c_bar <= l_f)")
    return math.sqrt(radicand)


def optimal_rho(c_bar, l_f):
    """Step size minimizing the contraction factor: c_bar / l_f^2.

    The attained factor is sqrt(1 - c_bar^2/l_f^2).
    """
    if c_bar <= 0.0 or l_f <= 0.0:
        raise ValueError("moduli must be positive")
    return c_bar / l_f**2


def solve_vi(problem, cfg, t, x):
    """Solve the pointwise VI at time t and state x.

    Returns (u_star, iters, final_residual) where final_residual is the
    last successive-iterate distance. Raises VISolveError when the budget
    is exhausted above tolerance or F returns a non-finite value.
    """
    x = np.asarray(x, dtype=float)
    U, iters, residual = solve_vi_batch(problem, cfg, t, x[None, :])
    return VISolution(U[0], int(iters[0]), float(residual[0]))


def solve_vi_batch(problem, cfg, t, X, u_start=None):
    """Vectorized VI solve across a batch of states X of shape (P, p).

    Rows iterate independently and freeze once their successive-iterate
    distance drops below tolerance, so a batch of one reproduces the
    scalar solve. ``u_start`` warm-starts the iteration (projected onto
    the set first); by default the start is the projection of cfg.u_init.
    """
    rho = cfg.resolve_rho(problem)
    X = np.asarray(X, dtype=float)
    P = X.shape[0]
    q = problem.cset.dim
    if u_start is None:
        init = np.zeros(q) if isinstance(cfg.u_init, str) else np.asarray(cfg.u_init, dtype=float)
        U = np.broadcast_to(init, (P, q)).copy()
    else:
        U = np.array(u_start, dtype=float, copy=True).reshape(P, q)
    U = problem.cset.project(U)
    iters = np.zeros(P, dtype=int)
    residual = np.full(P, np.inf)
    active = np.arange(P)
    for _ in range(cfg.max_iter):
        Fa = np.asarray(problem.F_eval(t, X[active], U[active]), dtype=float)
        if not np.all(np.isfinite(Fa)):
            raise VISolveError("non-finite value of F during VI solve")
        U_next = problem.cset.project(U[active] - rho * Fa)
        step = np.linalg.norm(U_next - U[active], axis=-1)
        U[active] = U_next
        iters[active] += 1
        residual[active] = step
        done = step <= cfg.tol
        active = active[~done]
        if active.size == 0:
            return U, iters, residual
    worst = float(residual[active].max())
    raise VISolveError(
        f"VI iteration budget {cfg.max_iter} exhausted with residual {worst:.3e} > tol {cfg.tol:.3e}",
        residual=worst,
        iters=cfg.max_iter,
    )


def vi_residual(problem, u, rho, t, x):
    """Natural-map residual ||u - P_K(u - rho*F(t, x, u))||; zero iff u solves the VI."""
    u = np.asarray(u, dtype=float)
    x = np.asarray(x, dtype=float)
    Fv = np.asarray(problem.F_eval(t, x, u), dtype=float)
    return float(np.linalg.norm(u - problem.cset.project(u - rho * Fv)))


def estimate_constants(F_eval, domain, x_samples, n_pairs, seed, t=0.0):
    """Empirical monotonicity and Lipschitz moduli of F by pair sampling.

    Draws ``n_pairs`` same-state pairs (u1, u2) in the set (used for the
    monotonicity quotient and also entering the Lipschitz maximum) plus
    ``n_pairs`` pairs varying both state and control. Sampling can only
    overestimate the infimum and underestimate the supremum, so the
    returned values are diagnostics, not certified bounds.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be at least 1")
    rng = np.random.default_rng(seed)
    x_samples = [np.asarray(x, dtype=float) for x in x_samples]
    q = domain.dim

    def draw_u(count):
        return domain.project(rng.normal(0.0, 1.0, size=(count, q)))

    c_hat = np.inf
    l_hat = 0.0
    made = 0
    while made < n_pairs:
        block = min(n_pairs - made, 1024)
        u1, u2 = draw_u(block), draw_u(block)
        du = np.linalg.norm(u1 - u2, axis=-1)
        keep = du > 1e-12  # degenerate pairs are resampled
        u1, u2, du = u1[keep], u2[keep], du[keep]
        if u1.shape[0] == 0:
            continue
        xs = np.stack([x_samples[(made + i) % len(x_samples)] for i in range(u1.shape[0])])
        dF = np.asarray(F_eval(t, xs, u1)) - np.asarray(F_eval(t, xs, u2))
        quot = np.einsum("ij,ij->i", dF, u1 - u2) / du**2
        c_hat = min(c_hat, float(quot.min()))
        l_hat = max(l_hat, float((np.linalg.norm(dF, axis=-1) / du).max()))
        made += u1.shape[0]
    made = 0
    while made < n_pairs:
        block = min(n_pairs - made, 1024)
        u1, u2 = draw_u(block), draw_u(block)
        i1 = rng.integers(0, len(x_samples), size=block)
        i2 = rng.integers(0, len(x_samples), size=block)
        x1 = np.stack([x_samples[i] for i in i1])
        x2 = np.stack([x_samples[i] for i in i2])
        denom = np.linalg.norm(x1 - x2, axis=-1) + np.linalg.norm(u1 - u2, axis=-1)
        keep = denom > 1e-12
        if not np.any(keep):
            continue
        dF = np.asarray(F_eval(t, x1[keep], u1[keep])) - np.asarray(F_eval(t, x2[keep], u2[keep]))
        l_hat = max(l_hat, float((np.linalg.norm(dF, axis=-1) / denom[keep]).max()))
        made += int(keep.sum())
    return float(c_hat), float(l_hat)
