"""Path integration of the coupled state/control system.

The state follows a jump diffusion with an extra memory term of order
alpha in (1/2, 1),

    x(t) = x0 + int_0^t b ds + alpha * int_0^t (t-s)^(alpha-1) sigma1 ds
         + int_0^t sigma dB + int_{||y||<c} G dN_compensated,

with all coefficients evaluated at left limits, while the control u(t)
solves the pointwise variational inequality VI(K, F(t, x(t), .)) at every
grid node. Time stepping is explicit left-point; the memory kernel is
integrated exactly over every subinterval so the scheme never evaluates
the singular kernel at s = t and is exact for constant integrands.

Paths are driven by seed-deterministic noise bundles. A batch integrator
advances many paths at once as stacked arrays; the single-path entry point
is the batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .vi import SolverConfig, VIProblem, VISolveError, solve_vi_batch


class PathIntegrationError(RuntimeError):
    """Path aborted; carries the step index and path index when known."""

    def __init__(self, message, step=None, path=None):
        super().__init__(message)
        self.step = step
        self.path = path


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, T] with N steps and memory order alpha."""

    T: float
    N: int
    alpha: float

    def __post_init__(self):
        if self.T <= 0.0:
            raise ValueError("horizon must be positive")
        if self.N < 1:
            raise ValueError("need at least one step")
        if not 0.5 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie strictly inside (0.5, 1), got {self.alpha}")

    @property
    def dt(self):
        return self.T / self.N

    def times(self):
        return np.linspace(0.0, self.T, self.N + 1)


@dataclass(frozen=True)
class JumpMeasure:
    """Finite discrete jump intensity measure: atoms (marks, weights).

    Marks live in R^p with norm strictly below the maximum jump size c;
    the total intensity is the sum of the weights, so the usual moment
    condition holds automatically. The compensator of the induced Poisson
    random measure is exact: integral of G against the measure is the
    weighted sum over atoms.
    """

    marks: np.ndarray
    weights: np.ndarray
    max_jump: float

    def __post_init__(self):
        marks = np.asarray(self.marks, dtype=float)
        if marks.ndim == 1:  # k scalar marks for a one-dimensional state
            marks = marks[:, None]
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "weights", np.atleast_1d(np.asarray(self.weights, dtype=float)))
        if self.marks.shape[0] != self.weights.size:
            raise ValueError("one weight per mark required")
        if np.any(self.weights <= 0.0):
            raise ValueError("weights must be positive")
        if self.max_jump < 0.0:
            raise ValueError("maximum jump size must be nonnegative")
        if np.any(np.linalg.norm(self.marks, axis=1) >= self.max_jump):
            raise ValueError("every mark must satisfy ||y|| < max_jump")

    @classmethod
    def empty(cls, p):
        return cls(marks=np.zeros((0, p)), weights=np.zeros(0), max_jump=0.0)

    @property
    def intensity(self):
        return float(self.weights.sum())

    @property
    def n_atoms(self):
        return self.marks.shape[0]


@dataclass(frozen=True)
class NoiseBundle:
    """Driving noise for one path: Brownian increments plus marked jumps.

    ``increments`` has shape (N, l) with Normal(0, dt) entries.
    ``jump_steps``/``jump_atoms`` list the grid step containing each jump
    time and the index of the sampled atom. Regenerating with the same
    (grid, l, measure, seed) reproduces the bundle bit for bit.
    """

    increments: np.ndarray
    jump_steps: np.ndarray
    jump_atoms: np.ndarray
    seed: object


def path_seed(seed_base, path_index):
    """Fixed mixing of a base seed with a path index (scheduling independent)."""
    return (int(seed_base), int(path_index))


def gen_noise(grid, l, jm, seed):
    """Draw a noise bundle: Brownian increments first, then jump arrivals.

    Jump times use exponential inter-arrivals at the total intensity and
    are binned into the grid step containing them; marks are categorical
    with probabilities proportional to the atom weights.
    """
    if l < 0:
        raise ValueError("noise dimension must be nonnegative")
    rng = np.random.default_rng(seed)
    increments = rng.normal(0.0, np.sqrt(grid.dt), size=(grid.N, l))
    steps, atoms = [], []
    lam = jm.intensity
    if lam > 0.0:
        probs = jm.weights / lam
        t = rng.exponential(1.0 / lam)
        while t < grid.T:
            steps.append(min(int(t / grid.dt), grid.N - 1))
            atoms.append(int(rng.choice(jm.n_atoms, p=probs)))
            t += rng.exponential(1.0 / lam)
    return NoiseBundle(
        increments=increments,
        jump_steps=np.asarray(steps, dtype=int),
        jump_atoms=np.asarray(atoms, dtype=int),
        seed=seed,
    )


@dataclass(frozen=True)
class CoefficientSet:
    """Evaluable system coefficients with their declared moduli.

    All callables broadcast over leading axes: b(t, x, u) -> (..., p),
    sigma1(t, x, u) -> (..., p), sigma(t, x, u) -> (..., p, l),
    G(t, x, u, y) -> (..., p) with y of shape (p,) or (..., p).
    The K_* constants bound squared growth, the L_* constants squared
    Lipschitz increments, both in the summed form over (x, u).
    """

    b: Callable
    sigma1: Callable
    sigma: Callable
    G: Callable
    p: int
    q: int
    l: int
    K_b: float = 1.0
    K_sigma: float = 1.0
    K_sigma1: float = 1.0
    K_G: float = 1.0
    L_b: float = 1.0
    L_sigma: float = 1.0
    L_sigma1: float = 1.0
    L_G: float = 1.0

    def __post_init__(self):
        for name in ("K_b", "K_sigma", "K_sigma1", "K_G", "L_b", "L_sigma", "L_sigma1", "L_G"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"declared constant {name} must be positive")

    def validate_continuity(self, grid, rng=None, samples=8, scale=1.0):
        """Spot-check continuity of sigma1 in t by finite differencing."""
        rng = np.random.default_rng(0) if rng is None else rng
        h = 1e-7 * grid.T
        for _ in range(samples):
            t = float(rng.uniform(0.0, grid.T - h))
            x = rng.normal(0.0, scale, size=self.p)
            u = rng.normal(0.0, scale, size=self.q)
            jump = np.linalg.norm(
                np.asarray(self.sigma1(t + h, x, u)) - np.asarray(self.sigma1(t, x, u))
            )
            if jump > 1e-3 * (1.0 + scale):
                raise ValueError(f"sigma1 looks discontinuous in t near t={t}")


@dataclass(frozen=True)
class PathSolution:
    """Discrete trajectories of one sample path, with VI iteration counts."""

    x: np.ndarray
    u: np.ndarray
    vi_iters: np.ndarray
    seed: object


def frac_weights(grid, n):
    """Exact memory-kernel weights for the n-th grid node.

    w[k] = (t_n - t_k)^alpha - (t_n - t_{k+1})^alpha for k < n, i.e. the
    kernel alpha*(t_n - s)^(alpha-1) integrated exactly over each
    subinterval. The weights telescope: sum_k w[k] = t_n^alpha.
    """
    if not 1 <= n <= grid.N:
        raise ValueError(f"node index {n} outside 1..{grid.N}")
    k = np.arange(n + 1)
    powers = ((n - k) * grid.dt) ** grid.alpha
    return powers[:-1] - powers[1:]


def compensator_integral(G_eval, jm, t, x, u):
    """Integral of G(t, x, u, y) against the jump intensity measure.

    Exact for the finite discrete measure: sum_i w_i * G(t, x, u, y_i).
    Broadcasts over leading axes of x and u.
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape)
    for w, y in zip(jm.weights, jm.marks):
        out += w * np.asarray(G_eval(t, x, u, y), dtype=float)
    return out


def _group_jumps(bundles, N):
    """Per-step arrays of (path index, atom index) across a batch of bundles."""
    by_step = [([], []) for _ in range(N)]
    for j, b in enumerate(bundles):
        for s, a in zip(b.jump_steps, b.jump_atoms):
            by_step[s][0].append(j)
            by_step[s][1].append(a)
    return [(np.asarray(p, dtype=int), np.asarray(a, dtype=int)) for p, a in by_step]


def integrate_paths(coeffs, viprob, cfg, grid, bundles, p0, jm):
    """Advance a batch of paths on a common grid, one VI solve per node.

    Every path owns its bundle; the batch is advanced as stacked arrays so
    results do not depend on how paths are grouped or scheduled. Memory
    sums are recomputed per node with exact kernel weights (quadratic cost
    in the step count). Returns one PathSolution per bundle.
    """
    P = len(bundles)
    N, dt = grid.N, grid.dt
    p0 = np.asarray(p0, dtype=float)
    if p0.shape != (coeffs.p,):
        raise PathIntegrationError(f"initial state must have shape ({coeffs.p},)")
    if viprob.cset.dim != coeffs.q:
        raise PathIntegrationError("constraint set dimension does not match coefficients")
    dB = np.stack([b.increments for b in bundles])  # (P, N, l)
    jumps = _group_jumps(bundles, N)
    times = grid.times()

    X = np.empty((N + 1, P, coeffs.p))
    U = np.empty((N + 1, P, coeffs.q))
    iters = np.empty((N + 1, P), dtype=int)
    X[0] = p0
    U[0], iters[0], _ = _solve_step(viprob, cfg, times[0], X[0], None, step=0)

    sig1_vals = np.empty((N, P, coeffs.p))
    drift_sum = np.zeros((P, coeffs.p))
    diff_sum = np.zeros((P, coeffs.p))
    jump_sum = np.zeros((P, coeffs.p))
    comp_sum = np.zeros((P, coeffs.p))
    for n in range(1, N + 1):
        k = n - 1
        t_k = times[k]
        drift_sum += np.asarray(coeffs.b(t_k, X[k], U[k]), dtype=float) * dt
        sig1_vals[k] = np.asarray(coeffs.sigma1(t_k, X[k], U[k]), dtype=float)
        sig = np.asarray(coeffs.sigma(t_k, X[k], U[k]), dtype=float)
        diff_sum += np.einsum("pij,pj->pi", sig.reshape(P, coeffs.p, coeffs.l), dB[:, k, :])
        paths_k, atoms_k = jumps[k]
        if paths_k.size:
            contrib = np.asarray(
                coeffs.G(t_k, X[k][paths_k], U[k][paths_k], jm.marks[atoms_k]), dtype=float
            )
            np.add.at(jump_sum, paths_k, contrib)
        if jm.n_atoms:
            comp_sum += compensator_integral(coeffs.G, jm, t_k, X[k], U[k]) * dt
        w = frac_weights(grid, n)
        frac = np.einsum("k,kpi->pi", w, sig1_vals[:n])
        X[n] = p0 + drift_sum + frac + diff_sum + jump_sum - comp_sum
        if not np.all(np.isfinite(X[n])):
            bad = int(np.flatnonzero(~np.isfinite(X[n]).all(axis=1))[0])
            raise PathIntegrationError(f"non-finite state at step {n}", step=n, path=bad)
        U[n], iters[n], _ = _solve_step(viprob, cfg, times[n], X[n], U[n - 1], step=n)

    return [
        PathSolution(x=X[:, j].copy(), u=U[:, j].copy(), vi_iters=iters[:, j].copy(), seed=b.seed)
        for j, b in enumerate(bundles)
    ]


def _solve_step(viprob, cfg, t, Xn, warm, step):
    try:
        return solve_vi_batch(viprob, cfg, t, Xn, u_start=warm)
    except VISolveError as exc:
        raise PathIntegrationError(f"VI solve failed at step {step}: {exc}", step=step) from exc


def integrate_path(coeffs, viprob, cfg, grid, noise, p0, jm):
    """Single-path integration: the batch of one."""
    return integrate_paths(coeffs, viprob, cfg, grid, [noise], p0, jm)[0]


def ito_isometry_check(f_eval, grid, paths, seed):
    """Monte-Carlo check of the stochastic-integral isometry for scalar f(t).

    lhs is the sample second moment of sum_k f(t_k) dB_k, rhs the exact
    sum_k f(t_k)^2 dt. Returns (lhs, rhs, rel_err).
    """
    if paths < 100:
        raise ValueError("need at least 100 paths")
    rng = np.random.default_rng(seed)
    dB = rng.normal(0.0, np.sqrt(grid.dt), size=(paths, grid.N))
    fv = np.array([f_eval(t) for t in grid.times()[:-1]], dtype=float)
    lhs = float(np.mean((dB @ fv) ** 2))
    rhs = float(np.sum(fv**2) * grid.dt)
    if rhs == 0.0:
        if abs(lhs) > 1e-12:
            raise ValueError(f"zero quadratic variation but lhs={lhs}")
        return lhs, rhs, 0.0
    return lhs, rhs, abs(lhs - rhs) / rhs


def doob_bound_check(grid, paths, seed):
    """Second-moment maximal inequality for the Brownian path itself.

    empirical = mean over paths of sup_k |B(t_k)|^2, bound = 4*E|B(T)|^2,
    the constant (p/(p-1))^p at p = 2. Returns (empirical, bound).
    """
    if paths < 100:
        raise ValueError("need at least 100 paths")
    rng = np.random.default_rng(seed)
    dB = rng.normal(0.0, np.sqrt(grid.dt), size=(paths, grid.N))
    B = np.cumsum(dB, axis=1)
    empirical = float(np.mean(np.max(B**2, axis=1)))
    return empirical, 4.0 * grid.T
