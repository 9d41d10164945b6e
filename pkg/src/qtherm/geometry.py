"""Complex linear algebra and phase-space quantities for pure quantum states.

A pure state is a unit vector ``psi`` in C^N; the physical state space is
the projective space of rays, so every exported quantity is invariant under
``psi -> exp(i*a) * psi``.  The metric convention on the projective space is
fixed operationally throughout the package: the scale is the unique one for
which the metric gradient-square of the energy function equals the quantum
variance ``<H^2> - <H>^2`` and the Laplace-Beltrami operator acting on an
expectation function gives ``N * (mean eigenvalue - expectation)``.  On the
two-level state space this makes the sphere of states the *unit* 2-sphere.

Units: hbar = 1 and k_B = 1; temperatures are reported in energy units.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "as_hermitian",
    "as_state",
    "expectation",
    "variance",
    "uniform_average",
    "projector",
    "sample_uniform",
    "variance_decomposition",
    "canonical_gauge",
    "uniform_projector_second_moment",
    "Spectrum",
]

HERMITICITY_TOL = 1e-12
NORM_TOL = 1e-12


def as_hermitian(a, tol=HERMITICITY_TOL):
    """Validate and return ``a`` as a complex Hermitian matrix.

    Hermiticity is checked relative to the largest entry magnitude.
    Raises ``ValueError`` for non-square or non-Hermitian input.
    """
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"operator must be a square matrix, got shape {a.shape}")
    scale = max(np.abs(a).max(), 1.0)
    dev = np.abs(a - a.conj().T).max()
    if dev > tol * scale:
        raise ValueError(f"operator is not Hermitian: max |A - A^dagger| = {dev:.3e}")
    return a


def as_state(psi, tol=NORM_TOL):
    """Validate and return ``psi`` as a normalized complex vector."""
    psi = np.asarray(psi, dtype=complex)
    if psi.ndim != 1:
        raise ValueError(f"state must be a vector, got shape {psi.shape}")
    nrm = np.linalg.norm(psi)
    if abs(nrm - 1.0) > tol:
        raise ValueError(f"state is not normalized: |psi| = {nrm!r}")
    return psi


def _check_dims(a, psi):
    if a.shape[-1] != psi.shape[-1]:
        raise ValueError(
            f"dimension mismatch: operator is {a.shape[-1]}-dimensional, "
            f"state is {psi.shape[-1]}-dimensional"
        )


def expectation(a, psi):
    """Expectation <psi|A|psi> of a Hermitian operator in a pure state.

    ``psi`` may carry leading batch axes; the return is real with the
    batch shape.  Invariant under a global phase of ``psi``.
    """
    a = np.asarray(a, dtype=complex)
    psi = np.asarray(psi, dtype=complex)
    _check_dims(a, psi)
    out = np.einsum("...i,ij,...j->...", psi.conj(), a, psi).real
    return float(out) if out.ndim == 0 else out


def variance(a, psi):
    """Quantum variance <A^2> - <A>^2 in the pure state ``psi`` (nonnegative).

    Equals the metric gradient-square of the expectation function on the
    projective space in the package convention.
    """
    a = np.asarray(a, dtype=complex)
    psi = np.asarray(psi, dtype=complex)
    _check_dims(a, psi)
    apsi = np.einsum("ij,...j->...i", a, psi)
    m2 = np.einsum("...i,...i->...", apsi.conj(), apsi).real  # <A^2> for Hermitian A
    m1 = np.einsum("...i,...i->...", psi.conj(), apsi).real
    out = np.maximum(m2 - m1 * m1, 0.0)
    return float(out) if out.ndim == 0 else out


def uniform_average(a):
    """Trace of the operator divided by its dimension (the high-temperature energy)."""
    a = np.asarray(a, dtype=complex)
    return float(np.trace(a).real) / a.shape[0]


def projector(psi):
    """Rank-one projector |psi><psi| onto the ray of ``psi``.

    Batched input of shape (..., N) gives (..., N, N).
    """
    psi = np.asarray(psi, dtype=complex)
    return np.einsum("...i,...j->...ij", psi, psi.conj())


def sample_uniform(dim, rng, size=None):
    """Draw pure states from the unitarily invariant (uniform) measure.

    Each amplitude is an independent standard complex Gaussian, then the
    vector is normalized; the induced populations |psi_k|^2 are uniformly
    distributed on the probability simplex.

    Returns shape (dim,) for ``size=None``, else (size, dim).
    """
    if dim < 2:
        raise ValueError("dim must be >= 2")
    n = 1 if size is None else int(size)
    z = rng.standard_normal((n, 2 * dim))
    psi = z[:, 0::2] + 1j * z[:, 1::2]
    psi /= np.linalg.norm(psi, axis=1, keepdims=True)
    return psi[0] if size is None else psi


def variance_decomposition(states, a):
    """Total / quantum / thermal split of the variance of A over an ensemble.

    For an equally weighted ensemble of pure states the outcome variance of
    A under the two-stage law (pick a state, then measure) decomposes as

        total = mean of the conditional variances
              + variance of the conditional expectations,

    and the identity holds exactly for the sample moments returned here.

    Returns ``(total, mean_conditional, variance_of_conditional)``.
    """
    states = np.asarray(states, dtype=complex)
    if states.ndim == 1:
        states = states[None, :]
    if states.shape[0] == 0:
        raise ValueError("ensemble must be nonempty")
    a = np.asarray(a, dtype=complex)
    _check_dims(a, states)
    apsi = states @ a.T
    m2 = np.einsum("si,si->s", apsi.conj(), apsi).real
    m1 = np.einsum("si,si->s", states.conj(), apsi).real
    mean_cond = float(np.mean(m2 - m1 * m1))
    var_cond = float(np.mean(m1 * m1) - np.mean(m1) ** 2)
    total = float(np.mean(m2) - np.mean(m1) ** 2)
    return total, mean_cond, var_cond


def canonical_gauge(psi):
    """Phase-fixed representative: first nonzero amplitude made real nonnegative.

    Display convention only; no dynamics depend on it.
    """
    psi = np.asarray(psi, dtype=complex)
    idx = np.flatnonzero(np.abs(psi) > 0)
    if idx.size == 0:
        return psi.copy()
    k = idx[0]
    return psi * (psi[k].conjugate() / abs(psi[k]))


def uniform_projector_second_moment(dim):
    """Exact second moment of the projector under the uniform state measure.

    R[i,j,k,l] = E[psi_i conj(psi_j) psi_k conj(psi_l)]
               = (delta_ij delta_kl + delta_il delta_kj) / (N (N + 1)).
    """
    eye = np.eye(dim)
    r = np.einsum("ij,kl->ijkl", eye, eye) + np.einsum("il,kj->ijkl", eye, eye)
    return r.astype(complex) / (dim * (dim + 1))


@dataclass(frozen=True)
class Spectrum:
    """Sorted energy levels of a Hermitian operator with its eigenbasis.

    ``basis`` columns are the eigenvectors, so ``operator = basis @ diag(levels) @ basis^dagger``.
    Two levels count as degenerate when their gap is below ``degeneracy_tol``.
    """

    levels: np.ndarray
    basis: np.ndarray = field(repr=False)
    degeneracy_tol: float = 0.0

    @classmethod
    def from_operator(cls, a, rel_tol=1e-9):
        a = as_hermitian(a)
        levels, basis = np.linalg.eigh(a)
        tol = rel_tol * max(1.0, np.abs(levels).max() if levels.size else 1.0)
        return cls(levels=levels, basis=basis, degeneracy_tol=tol)

    @classmethod
    def from_levels(cls, levels, rel_tol=1e-9):
        levels = np.sort(np.asarray(levels, dtype=float))
        tol = rel_tol * max(1.0, np.abs(levels).max() if levels.size else 1.0)
        return cls(levels=levels, basis=np.eye(len(levels), dtype=complex), degeneracy_tol=tol)

    @property
    def dim(self):
        return len(self.levels)

    @property
    def min_gap(self):
        gaps = np.diff(self.levels)
        return float(gaps.min()) if gaps.size else np.inf

    @property
    def is_degenerate(self):
        return self.min_gap < self.degeneracy_tol

    def operator(self):
        return (self.basis * self.levels) @ self.basis.conj().T
