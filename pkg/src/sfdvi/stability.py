"""Multi-parameter perturbation harness.

Runs the perturbed system (coefficients shifted along a sequence lambda_m,
constraint set along a sequence mu_n) against the limit system on common
random numbers, and measures the path-and-time mean-square distance of the
state and control trajectories. Common noise realizes the pathwise
comparison the convergence statement is about; with independent draws the
deterministic trend would drown in Monte-Carlo variance.

The module also evaluates the closed-form constants that appear in the
theoretical convergence bounds, for reporting alongside the empirical
errors (the bounds concern the exact solutions, so they are reported, not
asserted against the discretized errors).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .engine import JumpMeasure, PathIntegrationError, gen_noise, integrate_paths, path_seed
from .sets import SetFamily, mosco_probe
from .vi import VIProblem, optimal_rho

LIMIT = math.inf  # grid marker for the unperturbed parameter


@dataclass(frozen=True)
class BoundConstants:
    """Closed-form constants of the theoretical stability bounds."""

    m_bar: float
    n_bar: float
    m_hat: float
    n_hat: float
    z_bar: float
    b0: float


def theory_constants(c_bar, l_f, rho, alpha, T, l_b, l_sigma, l_sigma1, l_g):
    """Evaluate the six bound constants exactly as printed in the proofs.

    Requires rho strictly inside (0, 2*c_bar/l_f^2), where the contraction
    factor is below one and the shared denominator does not vanish, and
    alpha in (1/2, 1) so the memory-kernel factor T^(2*alpha-1)/(2*alpha-1)
    is finite.
    """
    if not 0.0 < rho < 2.0 * c_bar / l_f**2:
        raise ValueError(f"rho={rho} outside the admissible open interval (0, {2.0 * c_bar / l_f**2})")
    if not 0.5 < alpha < 1.0:
        raise ValueError("alpha must lie strictly inside (0.5, 1)")
    theta = math.sqrt(1.0 - 2.0 * rho * c_bar + rho**2 * l_f**2)
    den = (1.0 - theta) ** 2
    kernel = alpha**2 * T ** (2.0 * alpha - 1.0) / (2.0 * alpha - 1.0)
    z_bar = 4.0 * T * l_b + 16.0 * l_sigma + 16.0 * l_g + 4.0 * kernel * l_sigma1
    m_bar = 2.0 * rho**2 * l_f**2 / den
    return BoundConstants(
        m_bar=m_bar,
        n_bar=2.0 * rho**2 / den,
        m_hat=2.0 * rho**2 * l_f**2 / den,
        n_hat=2.0 / den,
        z_bar=z_bar,
        b0=(8.0 * T * l_b + 32.0 * l_sigma + 32.0 * l_g + 8.0 * kernel * l_sigma1) * (1.0 + m_bar),
    )


@dataclass(frozen=True)
class PerturbationFamily:
    """A two-parameter family of coupled systems around a limit system.

    ``lambda_to_coeffs`` maps the mapping parameter to a (CoefficientSet,
    VIKernel) pair; ``mu_to_set`` maps the set parameter to a constraint
    set. The declared moduli must be uniform across the family, so one
    step size is admissible everywhere. The initial state, noise dimension
    and jump measure complete the system description.
    """

    lambda_to_coeffs: Callable
    mu_to_set: Callable
    lambda_limit: np.ndarray
    mu_limit: np.ndarray
    lambda_seq: Callable[[int], np.ndarray]
    mu_seq: Callable[[int], np.ndarray]
    p0: np.ndarray
    noise_dim: int
    jumps: JumpMeasure

    def set_family(self):
        return SetFamily(
            parameter_to_set=self.mu_to_set,
            limit_set=self.mu_to_set(self.mu_limit),
            sequence=self.mu_seq,
        )


def _h_sq_samples(sols_a, sols_b, grid):
    """Per-path squared path-and-time distances for state and control."""
    if len(sols_a) != len(sols_b):
        raise ValueError("path counts differ")
    sx = np.empty(len(sols_a))
    su = np.empty(len(sols_a))
    for j, (a, b) in enumerate(zip(sols_a, sols_b)):
        if a.x.shape != b.x.shape or a.u.shape != b.u.shape:
            raise ValueError("solutions live on different grids")
        if a.x.shape[0] != grid.N + 1:
            raise ValueError("solutions do not match the grid")
        dx = a.x[:-1] - b.x[:-1]
        du = a.u[:-1] - b.u[:-1]
        sx[j] = float(np.sum(dx * dx) * grid.dt)
        su[j] = float(np.sum(du * du) * grid.dt)
    return sx, su


def h_norm_diff(sols_a, sols_b, grid):
    """Monte-Carlo path-and-time mean-square distance, for x and u parts.

    Discretizes (E int_0^T ||.||^2 dt)^(1/2) by the left-point rule in time
    and the sample mean over paths (paths must be paired by seed).
    """
    sx, su = _h_sq_samples(sols_a, sols_b, grid)
    return float(np.sqrt(sx.mean())), float(np.sqrt(su.mean()))


@dataclass(frozen=True)
class CellStats:
    err_x: float
    err_u: float
    mc_stderr: float


@dataclass
class StabilityReport:
    """The (m, n) error grid plus settings echo and bound constants.

    Keys are (m, n) pairs of floats; ``inf`` marks the limit parameter, so
    the cell (inf, inf) compares the limit system with itself and is zero
    by the common-noise construction.
    """

    cells: dict
    constants: BoundConstants
    settings: dict

    def sorted_cells(self):
        return sorted(self.cells.items())

    def err(self, m, n):
        return self.cells[(float(m), float(n))]


def _cell_stats(sols, base_sols, grid):
    sx, su = _h_sq_samples(sols, base_sols, grid)
    err_x = float(np.sqrt(sx.mean()))
    err_u = float(np.sqrt(su.mean()))
    P = sx.size

    def se(err, samples):
        if err <= 0.0 or P < 2:
            return 0.0
        return float(samples.std(ddof=1) / np.sqrt(P) / (2.0 * err))

    return CellStats(err_x=err_x, err_u=err_u, mc_stderr=max(se(err_x, sx), se(err_u, su)))


def run_stability(family, m_list, n_list, grid, paths, seed, cfg, threads=1):
    """Integrate the perturbation grid on common noise and report errors.

    One shared bundle per path drives every cell, the limit system
    included, so differences are pathwise effects of the perturbation
    alone. Cells with a limit marker on one axis isolate the two
    perturbation channels; they enter the triangle-split diagnostics.
    """
    for name, lst in (("m_list", m_list), ("n_list", n_list)):
        if not lst or list(lst) != sorted(lst):
            raise ValueError(f"{name} must be nonempty and ascending")
    bundles = [gen_noise(grid, family.noise_dim, family.jumps, path_seed(seed, j)) for j in range(paths)]

    def integrate_cell(lam, mu):
        coeffs, kernel = family.lambda_to_coeffs(lam)
        problem = VIProblem.from_kernel(family.mu_to_set(mu), kernel)
        try:
            return integrate_paths(coeffs, problem, cfg, grid, bundles, family.p0, family.jumps)
        except PathIntegrationError as exc:
            raise PathIntegrationError(
                f"cell (lambda={lam}, mu={mu}): {exc}", step=exc.step, path=exc.path
            ) from exc

    base_sols = integrate_cell(family.lambda_limit, family.mu_limit)
    keys = [(float(m), float(n)) for m in m_list for n in n_list]
    keys += [(float(m), LIMIT) for m in m_list]
    keys += [(LIMIT, float(n)) for n in n_list]
    keys += [(LIMIT, LIMIT)]

    def run_cell(key):
        m, n = key
        lam = family.lambda_limit if math.isinf(m) else family.lambda_seq(int(m))
        mu = family.mu_limit if math.isinf(n) else family.mu_seq(int(n))
        return key, _cell_stats(integrate_cell(lam, mu), base_sols, grid)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            cells = dict(pool.map(run_cell, keys))
    else:
        cells = dict(map(run_cell, keys))

    limit_coeffs, limit_kernel = family.lambda_to_coeffs(family.lambda_limit)
    rho = cfg.rho if cfg.rho is not None else optimal_rho(limit_kernel.c_bar, limit_kernel.l_f)
    constants = theory_constants(
        c_bar=limit_kernel.c_bar,
        l_f=limit_kernel.l_f,
        rho=rho,
        alpha=grid.alpha,
        T=grid.T,
        l_b=limit_coeffs.L_b,
        l_sigma=limit_coeffs.L_sigma,
        l_sigma1=limit_coeffs.L_sigma1,
        l_g=limit_coeffs.L_G,
    )
    settings = {
        "paths": paths,
        "seed": seed,
        "grid": {"T": grid.T, "N": grid.N, "alpha": grid.alpha},
        "rho": rho,
        "m_list": list(m_list),
        "n_list": list(n_list),
        "threads_invariant": True,  # cell results do not depend on scheduling
    }
    return StabilityReport(cells=cells, constants=constants, settings=settings)


def projection_convergence_report(family, n_list, probes):
    """Projection gap against the limit set for each member of the family.

    Accepts a PerturbationFamily (its set channel is probed) or a plain
    SetFamily. For a process constant in time the projection onto the
    constrained-process space acts pointwise, so pointwise probe gaps
    certify the projection convergence for that subclass of processes.
    """
    if not probes:
        raise ValueError("probe list must be nonempty")
    sf = family.set_family() if isinstance(family, PerturbationFamily) else family
    return [(int(n), mosco_probe(sf, int(n), probes)) for n in n_list]
