"""Density-matrix and projector-moment dynamics for state ensembles.

The density matrix is the ensemble first moment of the rank-one projector
onto the state; its equation of motion under the thermalising flow is not
closed: it couples to the second moment R[i,j,k,l] = E[Pi[i,j] Pi[k,l]].
``liouville_rhs`` evaluates that equation of motion,

    d(rho)/dt = i (H rho - rho H)
                - (kappa^2 beta / 4) (H rho + rho H)
                + (kappa^2 / 2) (I - N rho + beta * contract(H, R)),

with contract(H, R)[i,j] = sum_{k,l} H[l,k] R[i,j,k,l].  The first term has
the sign convention of the underlying phase-space flow (opposite to the
textbook Liouville-von Neumann sign); the orientation of the unitary
precession is the only thing that depends on it.  The right side is
trace-free and Hermitian whenever the inputs satisfy their invariants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import projector

__all__ = [
    "MomentSnapshot",
    "estimate_moments",
    "contract_second_moment",
    "liouville_terms",
    "liouville_rhs",
    "LiouvilleTerms",
    "LiouvilleReport",
    "verify_liouville",
]


@dataclass(frozen=True)
class MomentSnapshot:
    """Sample moments of the projector over an ensemble at one time.

    ``rho_stderr`` / ``r2_stderr`` are per-entry standard errors of the
    complex entries (quadrature sum of the real and imaginary part errors,
    jackknife-equivalent for a sample mean).
    """

    time: float
    rho: np.ndarray
    rho_stderr: np.ndarray
    r2: np.ndarray
    r2_stderr: np.ndarray
    nsamples: int


def _mean_and_se(values):
    """Entrywise mean and complex-entry standard error along axis 0."""
    m = values.shape[0]
    mean = values.mean(axis=0)
    if m == 1:
        return mean, np.zeros(mean.shape, dtype=float)
    var = values.real.var(axis=0, ddof=1) + values.imag.var(axis=0, ddof=1)
    return mean, np.sqrt(var / m)


def estimate_moments(states, time=0.0):
    """First and second projector moments of an ensemble of pure states.

    The partial trace of the second moment reproduces the density matrix
    exactly (sample-average identity, since each projector has unit trace).
    """
    states = np.asarray(states, dtype=complex)
    if states.ndim == 1:
        states = states[None, :]
    if states.shape[0] == 0:
        raise ValueError("ensemble must be nonempty")
    pi = projector(states)
    r2_samples = np.einsum("sij,skl->sijkl", pi, pi)
    rho, rho_se = _mean_and_se(pi)
    r2, r2_se = _mean_and_se(r2_samples)
    return MomentSnapshot(
        time=float(time),
        rho=rho,
        rho_stderr=rho_se,
        r2=r2,
        r2_stderr=r2_se,
        nsamples=states.shape[0],
    )


def contract_second_moment(h, r2):
    """contract(H, R)[i,j] = sum_{k,l} H[l,k] R[i,j,k,l].

    For R = Pi x Pi of a single pure state this reduces to <H> Pi.
    """
    return np.einsum("lk,ijkl->ij", h, r2)


@dataclass(frozen=True)
class LiouvilleTerms:
    """The three contributions to d(rho)/dt, exposed for term-level tests."""

    symplectic: np.ndarray  # i (H rho - rho H)
    laplacian: np.ndarray   # (kappa^2/2) (I - N rho), from the isotropic noise
    gradient: np.ndarray    # -(kappa^2 beta/4){H, rho} + (kappa^2 beta/2) contract(H, R)

    @property
    def total(self):
        return self.symplectic + self.laplacian + self.gradient


def liouville_terms(rho, r2, h, beta, kappa):
    rho = np.asarray(rho, dtype=complex)
    h = np.asarray(h, dtype=complex)
    n = rho.shape[0]
    if h.shape != rho.shape:
        raise ValueError(f"dimension mismatch: H is {h.shape}, rho is {rho.shape}")
    if r2 is not None and r2.shape != (n, n, n, n):
        raise ValueError(f"second moment has shape {np.shape(r2)}, expected {(n, n, n, n)}")
    hr = h @ rho
    rh = rho @ h
    symplectic = 1j * (hr - rh)
    laplacian = 0.5 * kappa**2 * (np.eye(n) - n * rho)
    gradient = -0.25 * kappa**2 * beta * (hr + rh)
    if beta != 0.0:
        gradient = gradient + 0.5 * kappa**2 * beta * contract_second_moment(h, r2)
    return LiouvilleTerms(symplectic=symplectic, laplacian=laplacian, gradient=gradient)


def liouville_rhs(rho, r2, h, beta, kappa):
    """Right-hand side of the density-matrix equation of motion."""
    return liouville_terms(rho, r2, h, beta, kappa).total


def _hermitian_components(a):
    """Independent real components of a Hermitian matrix: diag, re/im upper."""
    n = a.shape[-1]
    iu, ju = np.triu_indices(n, k=1)
    return np.concatenate(
        [np.diagonal(a, axis1=-2, axis2=-1).real, a[..., iu, ju].real, a[..., iu, ju].imag],
        axis=-1,
    )


@dataclass(frozen=True)
class LiouvilleReport:
    """Finite-difference check of the density-matrix law on a snapshot series.

    ``residual`` holds, per interior snapshot, the centered-difference time
    derivative of rho minus the evaluated right-hand side; ``normalized``
    divides each independent real component by its combined error
    (statistical standard error plus a curvature bias bound from
    interval-doubling).
    """

    times: np.ndarray
    residual: np.ndarray        # (K-2, N, N) complex
    normalized: np.ndarray      # (K-2, N^2) real, per independent component
    fraction_within_3: float
    max_normalized: float

    def to_dict(self):
        return {
            "times": self.times.tolist(),
            "max_abs_residual": float(np.abs(self.residual).max()),
            "max_normalized": self.max_normalized,
            "fraction_within_3": self.fraction_within_3,
            "per_time_max_normalized": np.max(self.normalized, axis=1).tolist(),
        }


def verify_liouville(snapshots, h, beta, kappa, residual_stats=None):
    """Check the moment series against the density-matrix equation of motion.

    Parameters
    ----------
    snapshots : sequence of MomentSnapshot at uniformly spaced times.
    residual_stats : optional ``(mean, stderr_re, stderr_im)`` arrays of the
        per-trajectory residual statistic, as accumulated by the SDE engine.
        When provided they give exact standard errors (all correlations
        between the finite difference and the right-hand side included);
        otherwise errors are propagated conservatively from the snapshot
        standard errors, which ignores the (favourable) correlations.
    """
    if len(snapshots) < 3:
        raise ValueError("need at least 3 snapshots for a centered difference")
    times = np.array([s.time for s in snapshots])
    dt = np.diff(times)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=1e-12):
        raise ValueError("snapshots must be uniformly spaced in time")
    delta = dt[0]
    rho = np.array([s.rho for s in snapshots])
    k = len(snapshots)
    n = rho.shape[-1]

    fd = (rho[2:] - rho[:-2]) / (2 * delta)
    rhs = np.array(
        [liouville_rhs(s.rho, s.r2, h, beta, kappa) for s in snapshots[1:-1]]
    )
    residual = fd - rhs

    # curvature bias bound: compare the centered difference with the
    # double-interval one and attribute the gap to the O(delta^2) term
    bias = np.zeros_like(rho[1:-1], dtype=float)
    if k >= 5:
        fd2 = (rho[4:] - rho[:-4]) / (4 * delta)
        gap = np.abs(fd[1:-1] - fd2) / 3.0
        bias[1:-1] = gap
        bias[0] = gap[0]
        bias[-1] = gap[-1]

    if residual_stats is not None:
        mean_d, se_re, se_im = residual_stats
        residual = np.asarray(mean_d)
        se_re = np.asarray(se_re)
        se_im = np.asarray(se_im)
    else:
        se_rho = np.array([s.rho_stderr for s in snapshots])
        se_fd = np.sqrt(se_rho[2:] ** 2 + se_rho[:-2] ** 2) / (2 * delta)
        se_rhs = np.array(
            [_propagated_rhs_stderr(s, h, beta, kappa) for s in snapshots[1:-1]]
        )
        se_re = se_im = se_fd + se_rhs

    comp = _hermitian_components(residual)
    den_re = _hermitian_components_abs(se_re + bias, n, imag=False)
    den_im = _hermitian_components_abs(se_im + bias, n, imag=True)
    denom = np.concatenate([den_re, den_im], axis=-1)
    floor = np.finfo(float).tiny
    normalized = np.abs(comp) / np.maximum(denom, floor)
    within = normalized <= 3.0
    return LiouvilleReport(
        times=times[1:-1],
        residual=residual,
        normalized=normalized,
        fraction_within_3=float(within.mean()),
        max_normalized=float(normalized.max()),
    )


def _hermitian_components_abs(err, n, imag):
    """Error entries matching the component layout of _hermitian_components."""
    err = np.asarray(err, dtype=float)
    iu, ju = np.triu_indices(n, k=1)
    off = err[..., iu, ju]
    if imag:
        return off
    diag = np.diagonal(err, axis1=-2, axis2=-1)
    return np.concatenate([diag, off], axis=-1)


def _propagated_rhs_stderr(snapshot, h, beta, kappa):
    """Conservative per-entry error of liouville_rhs from snapshot errors."""
    habs = np.abs(np.asarray(h))
    se_rho = snapshot.rho_stderr
    lin = habs @ se_rho + se_rho @ habs
    out = lin + 0.25 * kappa**2 * abs(beta) * lin
    n = se_rho.shape[0]
    out = out + 0.5 * kappa**2 * n * se_rho
    if beta != 0.0:
        out = out + 0.5 * kappa**2 * abs(beta) * np.einsum("lk,ijkl->ij", habs, snapshot.r2_stderr)
    return out
