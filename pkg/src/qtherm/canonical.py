"""Canonical phase-space ensemble over pure states: exact and Monte Carlo.

The stationary law of the thermalising dynamics weights the uniform measure
on pure states by exp(-beta * H(x)), where H(x) is the energy expectation in
the state x.  Under the uniform measure the energy-eigenbasis populations
p_k = |psi_k|^2 are flat-Dirichlet distributed on the simplex and the phases
are independent and uniform, which reduces every equilibrium average to a
simplex integral.  This module evaluates those integrals three ways:

* a closed form for the partition function with simple poles at coinciding
  levels (nondegenerate spectra),
* a numerically stable divided-difference form, using the identity that the
  divided differences of exp(-beta * E) over a node multiset appear in the
  first row of the matrix exponential of the bidiagonal node matrix (this
  also yields exact level-population moments, i.e. derivatives of the
  partition function with respect to individual levels),
* importance-weighted flat-Dirichlet Monte Carlo with standard errors.

The reported partition function ``z_rel`` is per unit phase-space volume
(the overall volume constant cancels in every physical ratio).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .geometry import Spectrum, as_hermitian, uniform_projector_second_moment

__all__ = [
    "partition_function",
    "dos",
    "DosEstimate",
    "equilibrium_energy",
    "heat_capacity",
    "population_mean",
    "population_second_moment",
    "mean_conditional_variance",
    "equilibrium_density_matrix",
    "equilibrium_second_moment",
    "verify_capacity_identity",
    "canonical_summary",
    "CanonicalResult",
    "von_neumann_density_matrix",
    "sample_dirichlet",
]

# Pole-sum terms may cancel; beyond this amplification switch to divided
# differences.
_POLE_SUM_MAX_AMPLIFICATION = 1e6


def _levels(spec):
    if isinstance(spec, Spectrum):
        return np.asarray(spec.levels, dtype=float), spec.degeneracy_tol
    lv = np.sort(np.asarray(spec, dtype=float).ravel())
    tol = 1e-9 * max(1.0, np.abs(lv).max() if lv.size else 1.0)
    return lv, tol


def _dd_exp(nodes, beta):
    """Divided difference of E -> exp(-beta*E) over the node multiset."""
    nodes = np.asarray(nodes, dtype=float)
    m = len(nodes)
    if m == 1:
        return float(np.exp(-beta * nodes[0]))
    j = np.diag(nodes) + np.diag(np.ones(m - 1), 1)
    return float(expm(-beta * j)[0, -1].real)


def _weighted_simplex_exp(nodes, beta):
    """E[exp(-beta * sum p_k E_k)] for p ~ Dirichlet with node multiplicities.

    ``nodes`` lists each level once per unit of its Dirichlet weight; with m+1
    nodes the value is m! * (-1/beta)^m times the divided difference of
    exp(-beta * E) over the multiset.
    """
    m = len(nodes) - 1
    if m == 0:
        return float(np.exp(-beta * nodes[0]))
    if beta == 0.0:
        return 1.0
    return math.factorial(m) * (-1.0 / beta) ** m * _dd_exp(nodes, beta)


def _z_pole_sum(levels, beta):
    """Closed form n! sum_k exp(-beta E_k) / prod_{j!=k} (beta (E_j - E_k)).

    Valid for distinct levels; returns (value, amplification) where the
    amplification measures cancellation among the terms.
    """
    e = np.asarray(levels, dtype=float)
    n = len(e) - 1
    diff = beta * (e[None, :] - e[:, None])  # diff[k, j] = beta (E_j - E_k)
    np.fill_diagonal(diff, 1.0)
    denom = np.prod(diff, axis=1)
    terms = math.factorial(n) * np.exp(-beta * e) / denom
    total = float(terms.sum())
    amp = float(np.abs(terms).sum() / max(abs(total), np.finfo(float).tiny))
    return total, amp


def partition_function(spec, beta):
    """Partition function per unit phase-space volume.

    Equals the flat-Dirichlet average of exp(-beta * sum_k p_k E_k).
    Nondegenerate, well-conditioned spectra use the closed pole-sum form;
    otherwise the stable divided-difference evaluation is used.
    """
    levels, tol = _levels(spec)
    beta = float(beta)
    if len(levels) == 1:
        return float(np.exp(-beta * levels[0]))
    if beta == 0.0:
        return 1.0
    gaps = np.diff(levels)
    if gaps.size and gaps.min() >= tol:
        val, amp = _z_pole_sum(levels, beta)
        if amp < _POLE_SUM_MAX_AMPLIFICATION and val > 0:
            return val
    return _weighted_simplex_exp(levels, beta)


def _log_z(levels, beta):
    return math.log(partition_function(levels, beta))


def equilibrium_energy(spec, beta, step=None):
    """Equilibrium energy U = -d(ln z)/d(beta), by central differences."""
    levels, _ = _levels(spec)
    if beta is not None and len(levels) == 1:
        return float(levels[0])
    d = 1e-4 * max(1.0, abs(beta)) if step is None else step
    u = -(_log_z(levels, beta + d) - _log_z(levels, beta - d)) / (2 * d)
    u_half = -(_log_z(levels, beta + d / 2) - _log_z(levels, beta - d / 2)) / d
    if abs(u - u_half) > 1e-6 * max(1.0, abs(u)):
        warnings.warn(
            f"equilibrium_energy: finite-difference estimates disagree "
            f"({u!r} vs {u_half!r}); result may be inaccurate",
            RuntimeWarning,
        )
    return u


def heat_capacity(spec, beta, step=None):
    """Heat capacity C = dU/dT = beta^2 * d^2(ln z)/d(beta)^2 (k_B = 1)."""
    if beta <= 0:
        raise ValueError("heat_capacity requires beta > 0 (T = 1/beta)")
    levels, _ = _levels(spec)
    if len(levels) == 1:
        return 0.0
    d = 1e-4 * max(1.0, abs(beta)) if step is None else step

    def second(dd):
        return (
            _log_z(levels, beta + dd) - 2 * _log_z(levels, beta) + _log_z(levels, beta - dd)
        ) / dd**2

    c2 = second(d)
    c2_half = second(d / 2)
    if abs(c2 - c2_half) > 1e-4 * max(1.0, abs(c2)):
        warnings.warn(
            f"heat_capacity: finite-difference estimates disagree ({c2!r} vs {c2_half!r})",
            RuntimeWarning,
        )
    return beta**2 * c2


def population_mean(spec, beta):
    """Exact equilibrium mean populations E[p_k] in the energy eigenbasis.

    These are the diagonal entries of the equilibrium density matrix and
    equal -(1/beta) d(ln z)/dE_k; evaluated exactly through divided
    differences with the node E_k repeated.
    """
    levels, _ = _levels(spec)
    n = len(levels)
    if beta == 0.0:
        return np.full(n, 1.0 / n)
    z = partition_function(levels, beta)
    out = np.empty(n)
    for k in range(n):
        nodes = np.append(levels, levels[k])
        out[k] = _weighted_simplex_exp(np.sort(nodes), beta) / (n * z)
    return out


def population_second_moment(spec, beta):
    """Exact equilibrium second moments E[p_k p_l] in the energy eigenbasis."""
    levels, _ = _levels(spec)
    n = len(levels)
    if beta == 0.0:
        return (np.ones((n, n)) + np.eye(n)) / (n * (n + 1))
    z = partition_function(levels, beta)
    m2 = np.empty((n, n))
    for k in range(n):
        for l in range(k, n):
            nodes = np.sort(np.concatenate([levels, [levels[k], levels[l]]]))
            mult = 2.0 if k == l else 1.0
            m2[k, l] = m2[l, k] = mult * _weighted_simplex_exp(nodes, beta) / (n * (n + 1) * z)
    return m2


def mean_conditional_variance(spec, beta):
    """Equilibrium average of the quantum variance, E_rho[<H^2> - <H>^2]."""
    levels, _ = _levels(spec)
    pk = population_mean(levels, beta)
    m2 = population_second_moment(levels, beta)
    mean_h2 = pk @ levels**2
    mean_hx2 = levels @ m2 @ levels  # E[(sum p_k E_k)^2]
    return float(mean_h2 - mean_hx2)


def sample_dirichlet(dim, size, rng):
    """Flat-Dirichlet samples on the simplex (uniform-measure populations)."""
    g = rng.standard_exponential((size, dim))
    return g / g.sum(axis=1, keepdims=True)


def _boltzmann_weights(populations, levels, beta):
    x = -beta * (populations @ levels)
    x -= x.max()  # weights enter only as ratios
    return np.exp(x)


def _ratio_mean_se(num, w):
    """Mean and standard error of E[num]/E[w] ratio estimators (delta method)."""
    wbar = w.mean()
    r = num.mean(axis=0) / wbar
    resid = num - np.multiply.outer(w, r)
    se = resid.std(axis=0, ddof=1) / (abs(wbar) * math.sqrt(len(w)))
    return r, se


def equilibrium_density_matrix(h, beta, samples=10**6, rng=None):
    """Equilibrium density matrix (first moment of the projector) with errors.

    Computed by importance-weighted flat-Dirichlet sampling of the
    eigenbasis populations; phase averaging makes the matrix diagonal in the
    energy eigenbasis, and it is rotated back to the operator's basis.

    Returns ``(rho, stderr)`` where ``stderr`` gives per-entry standard
    errors (propagated through the basis rotation by magnitude).
    """
    spec = Spectrum.from_operator(as_hermitian(h))
    rng = np.random.default_rng(0) if rng is None else rng
    p = sample_dirichlet(spec.dim, samples, rng)
    w = _boltzmann_weights(p, spec.levels, beta)
    diag, diag_se = _ratio_mean_se(p * w[:, None], w)
    u = spec.basis
    rho = (u * diag) @ u.conj().T
    stderr = np.einsum("ak,k,bk->ab", np.abs(u) ** 2, diag_se, np.abs(u) ** 2)
    return rho, stderr


def equilibrium_second_moment(h, beta, samples=10**6, rng=None):
    """Equilibrium second moment of the projector, R[i,j,k,l], with errors.

    In the eigenbasis only phase-balanced index patterns survive:
    R[i,i,k,k] and R[i,k,k,i] carry E[p_i p_k], all else vanishes.
    """
    spec = Spectrum.from_operator(as_hermitian(h))
    rng = np.random.default_rng(0) if rng is None else rng
    p = sample_dirichlet(spec.dim, samples, rng)
    w = _boltzmann_weights(p, spec.levels, beta)
    pairs = np.einsum("sk,sl->skl", p, p)
    m2, m2_se = _ratio_mean_se(pairs * w[:, None, None], w)
    r2 = _assemble_second_moment(m2)
    se_eig = _assemble_second_moment(m2_se).real
    u = spec.basis
    r2 = np.einsum("ai,bj,ck,dl,ijkl->abcd", u, u.conj(), u, u.conj(), r2)
    ua = np.abs(u)
    stderr = np.einsum("ai,bj,ck,dl,ijkl->abcd", ua, ua, ua, ua, se_eig)
    return r2, stderr


def _assemble_second_moment(m2):
    """Build R[i,j,k,l] in the eigenbasis from population pair moments."""
    n = m2.shape[0]
    eye = np.eye(n)
    r = np.einsum("ij,kl,ik->ijkl", eye, eye, m2) + np.einsum("il,kj,ik->ijkl", eye, eye, m2)
    for i in range(n):  # the fully diagonal pattern is counted once
        r[i, i, i, i] -= m2[i, i]
    return r.astype(complex)


def verify_capacity_identity(spec, beta):
    """Residual of the heat-capacity identity (k_B = 1)

        T^2 C = Var[H] + N T (U - mean level),

    where Var[H] is the total (quantum plus thermal) energy variance
    computed from exact level populations.  Returns |LHS - RHS|.
    """
    if beta <= 0:
        raise ValueError("verify_capacity_identity requires beta > 0")
    levels, _ = _levels(spec)
    n = len(levels)
    t = 1.0 / beta
    lhs = t**2 * heat_capacity(levels, beta)
    u = equilibrium_energy(levels, beta)
    var_total = population_mean(levels, beta) @ levels**2 - u**2
    rhs = var_total + n * t * (u - levels.mean())
    return float(abs(lhs - rhs))


@dataclass(frozen=True)
class CanonicalResult:
    """Equilibrium thermodynamics of one spectrum at one temperature."""

    beta: float
    z_rel: float
    u: float
    var_total: float
    var_classical: float
    c: float


def canonical_summary(spec, beta):
    """Exact-route equilibrium summary (no Monte Carlo)."""
    levels, _ = _levels(spec)
    n = len(levels)
    z = partition_function(levels, beta)
    u = equilibrium_energy(levels, beta)
    pk = population_mean(levels, beta)
    var_total = float(pk @ levels**2 - u**2)
    if beta > 0:
        c = heat_capacity(levels, beta)
        var_classical = c / beta**2
    else:
        d = 1e-4
        var_classical = (
            _log_z(levels, d) - 2 * _log_z(levels, 0.0) + _log_z(levels, -d)
        ) / d**2
        c = 0.0
    return CanonicalResult(
        beta=float(beta), z_rel=z, u=u, var_total=var_total, var_classical=var_classical, c=c
    )


@dataclass(frozen=True)
class DosEstimate:
    """Density of states over the energy range of the spectrum, normalized to 1."""

    energies: np.ndarray
    density: np.ndarray
    stderr: np.ndarray | None
    method: str


def dos(spec, grid, samples=10**6, rng=None):
    """Density of the energy expectation over the uniform state measure.

    For up to three levels the density is an exact piecewise polynomial
    (constant or tent-shaped); beyond that a Monte Carlo histogram with bin
    standard errors is returned on the cell midpoints of ``grid``.
    """
    levels, tol = _levels(spec)
    grid = np.asarray(grid, dtype=float)
    e_min, e_max = levels[0], levels[-1]
    if e_max - e_min < tol:
        raise ValueError("spectrum is fully degenerate: the density is a point mass")
    if grid.min() < e_min - 1e-12 or grid.max() > e_max + 1e-12:
        raise ValueError(
            f"grid must lie inside the spectral hull [{e_min}, {e_max}]"
        )
    n = len(levels)
    if n == 2:
        return DosEstimate(grid, np.full_like(grid, 1.0 / (e_max - e_min)), None, "exact-piecewise")
    if n == 3:
        return DosEstimate(grid, _dos_three_levels(levels, grid, tol), None, "exact-piecewise")
    rng = np.random.default_rng(0) if rng is None else rng
    p = sample_dirichlet(n, samples, rng)
    counts, edges = np.histogram(p @ levels, bins=grid)
    width = np.diff(edges)
    frac = counts / samples
    density = frac / width
    stderr = np.sqrt(np.maximum(frac * (1 - frac), 0.0) / samples) / width
    mids = 0.5 * (edges[:-1] + edges[1:])
    return DosEstimate(mids, density, stderr, "monte-carlo")


def _dos_three_levels(levels, grid, tol):
    e0, e1, e2 = levels
    span = e2 - e0
    out = np.zeros_like(grid)
    if e1 - e0 < tol:  # double level at the bottom: decreasing ramp
        return np.clip(2.0 * (e2 - grid), 0.0, None) / span**2
    if e2 - e1 < tol:  # double level at the top: increasing ramp
        return np.clip(2.0 * (grid - e0), 0.0, None) / span**2
    lo = grid <= e1
    out[lo] = 2.0 * (grid[lo] - e0) / ((e1 - e0) * span)
    out[~lo] = 2.0 * (e2 - grid[~lo]) / ((e2 - e1) * span)
    return np.clip(out, 0.0, None)


def von_neumann_density_matrix(h, beta):
    """Conventional operator-weighted thermal state exp(-beta H)/tr exp(-beta H).

    Reference for side-by-side comparison with the phase-space ensemble; the
    two differ at finite temperature.
    """
    spec = Spectrum.from_operator(as_hermitian(h))
    x = -beta * (spec.levels - spec.levels.min())
    w = np.exp(x)
    w /= w.sum()
    return (spec.basis * w) @ spec.basis.conj().T


def uniform_second_moment_reference(dim):
    """Infinite-temperature second moment (re-export for convenience)."""
    return uniform_projector_second_moment(dim)
