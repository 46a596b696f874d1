"""Named builtin families of system coefficients, VI kernels and sets.

Scenario files refer to coefficients and mappings by family name plus a
typed parameter tree; arbitrary user code is deliberately not an input.
The registry computes honest moduli (growth, Lipschitz, monotonicity)
for every family it builds, in the squared summed form used throughout.
"""

from __future__ import annotations

import numpy as np

from .engine import CoefficientSet, JumpMeasure
from .sets import Ball, Box, HalfspaceIntersection, NonnegOrthant, Product, TransportSet
from .vi import VIKernel

_EPS = 1e-12


def _as_matrix(value, rows, cols, name):
    if value is None:
        return np.zeros((rows, cols))
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(rows, cols)
    if arr.shape != (rows, cols):
        raise ValueError(f"{name} must have shape ({rows}, {cols}), got {arr.shape}")
    return arr


def _as_vector(value, size, name):
    if value is None:
        return np.zeros(size)
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.shape != (size,):
        raise ValueError(f"{name} must have length {size}, got shape {arr.shape}")
    return arr


def _spec_norm(mat):
    return float(np.linalg.norm(mat, 2)) if mat.size else 0.0


def affine_coefficients(p, q, l, params, jumps):
    """Affine drift and memory coefficients, constant diffusion, marks
    scaled linearly by the state:

        b(t,x,u)      = b0 + Bx x + Bu u
        sigma1(t,x,u) = s10 + S1x x + S1u u
        sigma(t,x,u)  = Sg0                      (constant p x l matrix)
        G(t,x,u,y)    = (g0 + gx*x + gu*Eu) * y  (componentwise in y)

    with E the mean coupling matrix ones(p, q)/q.
    """
    b0 = _as_vector(params.get("b0"), p, "b0")
    Bx = _as_matrix(params.get("bx"), p, p, "bx")
    Bu = _as_matrix(params.get("bu"), p, q, "bu")
    s10 = _as_vector(params.get("s10"), p, "s10")
    S1x = _as_matrix(params.get("s1x"), p, p, "s1x")
    S1u = _as_matrix(params.get("s1u"), p, q, "s1u")
    Sg0 = _as_matrix(params.get("sig0"), p, l, "sig0")
    g0 = _as_vector(params.get("g0"), p, "g0")
    gx = float(params.get("gx", 0.0))
    gu = float(params.get("gu", 0.0))
    E = np.ones((p, q)) / q

    def b(t, x, u):
        return b0 + x @ Bx.T + u @ Bu.T

    def sigma1(t, x, u):
        return s10 + x @ S1x.T + u @ S1u.T

    def sigma(t, x, u):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(Sg0, x.shape[:-1] + (p, l)).copy()

    def G(t, x, u, y):
        scale = g0 + gx * np.asarray(x, dtype=float) + gu * (np.asarray(u, dtype=float) @ E.T)
        return scale * y

    def lip(mx, mu_):
        return max(2.0 * max(_spec_norm(mx), _spec_norm(mu_)) ** 2, _EPS)

    def growth(v0, mx, mu_):
        return max(3.0 * max(float(v0 @ v0), _spec_norm(mx) ** 2, _spec_norm(mu_) ** 2), _EPS)

    mark_sq = float(np.sum(jumps.weights * np.max(np.abs(jumps.marks), axis=1) ** 2)) if jumps.n_atoms else 0.0
    e_norm = _spec_norm(E)
    return CoefficientSet(
        b=b, sigma1=sigma1, sigma=sigma, G=G, p=p, q=q, l=l,
        K_b=growth(b0, Bx, Bu),
        K_sigma=max(float(np.sum(Sg0**2)), _EPS),
        K_sigma1=growth(s10, S1x, S1u),
        K_G=max(3.0 * mark_sq * max(float(g0 @ g0), gx**2, (gu * e_norm) ** 2), _EPS),
        L_b=lip(Bx, Bu),
        L_sigma=_EPS,
        L_sigma1=lip(S1x, S1u),
        L_G=max(2.0 * mark_sq * max(gx**2, (gu * e_norm) ** 2), _EPS),
    )


def saturating_coefficients(p, q, l, params, jumps):
    """Bounded-nonlinearity variant: tanh squashing of state and control,

        b(t,x,u)      = b0 + Bx tanh(x) + Bu tanh(u)
        sigma1(t,x,u) = s10 + S1x tanh(x)
        sigma(t,x,u)  = Sg0 * (1 + sx*tanh(x_i)) rowwise
        G(t,x,u,y)    = (g0 + gx*tanh(x)) * y.
    """
    b0 = _as_vector(params.get("b0"), p, "b0")
    Bx = _as_matrix(params.get("bx"), p, p, "bx")
    Bu = _as_matrix(params.get("bu"), p, q, "bu")
    s10 = _as_vector(params.get("s10"), p, "s10")
    S1x = _as_matrix(params.get("s1x"), p, p, "s1x")
    Sg0 = _as_matrix(params.get("sig0"), p, l, "sig0")
    sx = float(params.get("sx", 0.0))
    g0 = _as_vector(params.get("g0"), p, "g0")
    gx = float(params.get("gx", 0.0))

    def b(t, x, u):
        return b0 + np.tanh(x) @ Bx.T + np.tanh(u) @ Bu.T

    def sigma1(t, x, u):
        return s10 + np.tanh(x) @ S1x.T

    def sigma(t, x, u):
        x = np.asarray(x, dtype=float)
        mod = 1.0 + sx * np.tanh(x)
        return Sg0 * mod[..., :, None]

    def G(t, x, u, y):
        return (g0 + gx * np.tanh(np.asarray(x, dtype=float))) * y

    mark_sq = float(np.sum(jumps.weights * np.max(np.abs(jumps.marks), axis=1) ** 2)) if jumps.n_atoms else 0.0
    row_sq = float(np.max(np.sum(Sg0**2, axis=1))) if Sg0.size else 0.0
    return CoefficientSet(
        b=b, sigma1=sigma1, sigma=sigma, G=G, p=p, q=q, l=l,
        K_b=max(3.0 * max(float(b0 @ b0), _spec_norm(Bx) ** 2 * p, _spec_norm(Bu) ** 2 * q), _EPS),
        K_sigma=max(2.0 * float(np.sum(Sg0**2)) * (1.0 + sx**2), _EPS),
        K_sigma1=max(3.0 * max(float(s10 @ s10), _spec_norm(S1x) ** 2 * p), _EPS),
        K_G=max(3.0 * mark_sq * max(float(g0 @ g0), gx**2 * p), _EPS),
        L_b=max(2.0 * max(_spec_norm(Bx), _spec_norm(Bu)) ** 2, _EPS),
        L_sigma=max(sx**2 * row_sq, _EPS),
        L_sigma1=max(2.0 * _spec_norm(S1x) ** 2, _EPS),
        L_G=max(2.0 * mark_sq * gx**2, _EPS),
    )


def zero_coefficients(p, q, l, params, jumps):
    """Frozen system: every coefficient identically zero."""
    zero_vec = lambda t, x, u: np.zeros(np.asarray(x, dtype=float).shape)

    def sigma(t, x, u):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (p, l))

    def G(t, x, u, y):
        return np.zeros(np.broadcast_shapes(np.asarray(x).shape, np.shape(y)))

    return CoefficientSet(
        b=zero_vec, sigma1=zero_vec, sigma=sigma, G=G, p=p, q=q, l=l,
        K_b=_EPS, K_sigma=_EPS, K_sigma1=_EPS, K_G=_EPS,
        L_b=_EPS, L_sigma=_EPS, L_sigma1=_EPS, L_G=_EPS,
    )


_COEFFICIENTS = {
    "zero": zero_coefficients,
    "affine": affine_coefficients,
    "saturating": saturating_coefficients,
}


def coefficient_family(name, p, q, l, params, jumps):
    if name not in _COEFFICIENTS:
        raise KeyError(f"unknown coefficient family '{name}' (have {sorted(_COEFFICIENTS)})")
    return _COEFFICIENTS[name](p, q, l, dict(params), jumps)


def affine_kernel(p, q, params):
    """VI mapping F(t, x, u) = Gm u + S x + f0 with exact moduli.

    The monotonicity modulus is the smallest eigenvalue of the symmetric
    part of Gm (must be positive), the Lipschitz modulus the larger of the
    two spectral norms.
    """
    Gm = _as_matrix(params.get("gamma"), q, q, "gamma")
    S = _as_matrix(params.get("smat"), q, p, "smat")
    f0 = _as_vector(params.get("f0"), q, "f0")
    c_bar = float(np.linalg.eigvalsh(0.5 * (Gm + Gm.T)).min())
    if c_bar <= 0.0:
        raise ValueError("gamma must have positive-definite symmetric part")
    l_f = max(_spec_norm(Gm), _spec_norm(S), c_bar)

    def F(t, x, u):
        return np.asarray(u, dtype=float) @ Gm.T + np.asarray(x, dtype=float) @ S.T + f0

    return VIKernel(F_eval=F, c_bar=c_bar, l_f=l_f)


_KERNELS = {"affine": affine_kernel}


def vi_kernel(name, p, q, params):
    if name not in _KERNELS:
        raise KeyError(f"unknown VI mapping family '{name}' (have {sorted(_KERNELS)})")
    return _KERNELS[name](p, q, dict(params))


def set_from_node(node):
    """Build a catalog set from a configuration node discriminated by kind."""
    kind = node["kind"]
    if kind == "box":
        return Box(node["lo"], node["hi"])
    if kind == "orthant":
        return NonnegOrthant(node["dim"])
    if kind == "ball":
        return Ball(node["center"], node["radius"])
    if kind == "halfspaces":
        return HalfspaceIntersection(node["normals"], node["offsets"], node["interior_point"])
    if kind == "transport":
        return TransportSet(node["m"], node["n"], cap=node.get("cap"))
    if kind == "product":
        return Product([set_from_node(f) for f in node["factors"]])
    raise KeyError(f"unknown set kind '{kind}'")


def _rate(name):
    if name == "1/n":
        return lambda n: 1.0 / n
    if name == "2^-n":
        return lambda n: 2.0**-n
    raise KeyError(f"unknown rate '{name}' (have '1/n', '2^-n')")


def set_family(node):
    """Nested families with analytically known limit behaviour.

    ``nested_box`` widens the upper corner by delta*rate(n), ``nested_ball``
    the radius, ``capped_transport`` the flow cap; the limit is the
    unwidened set in every case.
    """
    from .sets import SetFamily

    name = node["family"]
    rate = _rate(node.get("rate", "1/n"))
    delta = float(node.get("delta", 1.0))
    if name == "nested_box":
        lo = np.asarray(node["lo"], dtype=float)
        hi = np.asarray(node["hi"], dtype=float)
        to_set = lambda mu: Box(lo, hi + float(np.atleast_1d(mu)[0]))
    elif name == "nested_ball":
        center = np.asarray(node["center"], dtype=float)
        radius = float(node["radius"])
        to_set = lambda mu: Ball(center, radius + float(np.atleast_1d(mu)[0]))
    elif name == "capped_transport":
        m, n_, cap = int(node["m"]), int(node["n"]), float(node["cap"])
        to_set = lambda mu: TransportSet(m, n_, cap=cap + float(np.atleast_1d(mu)[0]))
    else:
        raise KeyError(f"unknown set family '{name}'")
    return SetFamily(
        parameter_to_set=to_set,
        limit_set=to_set(0.0),
        sequence=lambda n: np.array([delta * rate(n)]),
    )
