"""Lattice Fourier transform and dynamical-matrix assembly.

Conventions (fixed package-wide):

* analysis   ``f_hat(k, a) = V * sum_l f(l, a) exp(+i k . x(l, a))``
* synthesis  ``f(l, a) = 1/(V P^n) * sum_k f_hat(k, a) exp(-i k . x(l, a))``

on a torus of ``P`` cells per dimension, whose dual grid is
``k = sum_j (c_j / P) g_j`` with folded integer coordinates
``c_j in [-P/2, P/2)``.  The joint-class shift rides inside the phase
``x(l, a)``, so the bar functionals below carry half-phases built from
the full geometric span ``dx`` of each bar class.

The total elastic energy of a displacement field equals
``sum_k 1/(V P^n) * 1/2 u_hat(k)^H D(k) u_hat(k)`` with the Hermitian
dynamical matrix ``D(k)`` assembled here as a sum of rank-one terms
``(c/V) g^H g`` over bar classes and energy functionals.  Row/column
order is joint-class major: deflection components first, then rotation
components, per class.

``D`` is positive semidefinite, satisfies ``D(-k) = conj(D(k))``, and is
quasi-periodic across reciprocal translations (spectra are periodic,
entries pick up joint-dependent phases).
"""

from __future__ import annotations

import numpy as np

from .beams import beam_energy_terms
from .errors import ValidationError, Violation, WavevectorOutsideBZ, ZeroWavevector

__all__ = [
    "torus_wavevectors",
    "dft_forward",
    "dft_inverse",
    "bar_difference_functionals",
    "assemble_dynamical_matrix",
    "scaled_dynamical_matrix",
    "rotation_slot_mask",
    "dispersion",
]


def _joint_phases(spec, k: np.ndarray) -> np.ndarray:
    """exp(+i k . b_alpha) for every joint class."""
    shifts = np.stack([j.shift for j in spec.joints])
    return np.exp(1j * shifts @ np.atleast_1d(k))


def torus_wavevectors(spec, periods) -> np.ndarray:
    """Dual-grid wavevectors of a P-torus, shaped (*P, n), fft ordering."""
    n = spec.dimension
    periods = _as_periods(periods, n)
    fracs = np.meshgrid(*[np.fft.fftfreq(p) for p in periods], indexing="ij")
    frac = np.stack(fracs, axis=-1)
    return frac @ spec.basis.reciprocal


def _as_periods(periods, n):
    if np.isscalar(periods):
        return (int(periods),) * n
    periods = tuple(int(p) for p in periods)
    if len(periods) != n:
        raise ValidationError([Violation("BadPeriods", f"need {n} period counts")])
    return periods


def dft_forward(spec, values: np.ndarray, periods=None) -> np.ndarray:
    """Forward transform of a torus lattice function.

    ``values`` has shape (*P, N, m); the result is complex of the same
    shape, indexed by the fft-ordered dual grid of
    :func:`torus_wavevectors`.
    """
    n = spec.dimension
    periods = values.shape[:n] if periods is None else _as_periods(periods, n)
    axes = tuple(range(n))
    out = np.fft.ifftn(np.asarray(values), axes=axes) * np.prod(periods)
    k = torus_wavevectors(spec, periods)
    shifts = np.stack([j.shift for j in spec.joints])
    phase = np.exp(1j * k @ shifts.T)  # (*P, N)
    return spec.basis.volume * out * phase[..., None]


def dft_inverse(spec, values_hat: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dft_forward`; returns a complex array."""
    n = spec.dimension
    periods = values_hat.shape[:n]
    k = torus_wavevectors(spec, periods)
    shifts = np.stack([j.shift for j in spec.joints])
    phase = np.exp(-1j * k @ shifts.T)
    scaled = values_hat * phase[..., None]
    axes = tuple(range(n))
    return np.fft.fftn(scaled, axes=axes) / (spec.basis.volume * np.prod(periods))


def _term_row(spec, bar, k, wv_minus, wth_minus, wv_plus, wth_plus) -> np.ndarray:
    """Stacked row functional of one energy term at wavevector k."""
    p = spec.layout.per_joint
    nv = spec.layout.n_defl
    phi = 0.5 * float(np.atleast_1d(k) @ bar.dx)
    ep = np.exp(-1j * phi)  # end joint
    em = np.exp(+1j * phi)  # begin joint
    row = np.zeros(spec.n_joint_classes * p, dtype=complex)
    sl_p = bar.end_joint * p
    sl_m = bar.begin_joint * p
    row[sl_p:sl_p + nv] += ep * wv_plus
    row[sl_p + nv:sl_p + p] += ep * wth_plus
    row[sl_m:sl_m + nv] += em * wv_minus
    row[sl_m + nv:sl_m + p] += em * wth_minus
    return row


def bar_difference_functionals(spec, beta: int, k):
    """Complex row functionals (dv, dth, th_mean) of bar class ``beta``.

    Each is a matrix of rows over the stacked amplitude array: ``dv``
    has one row per deflection component, ``dth`` and ``th_mean`` one
    per rotation component.  At k=0 they reduce to plain differences
    and the plain mean.
    """
    bar = spec.bars[beta]
    nv, nr = spec.layout.n_defl, spec.layout.n_rot
    zv, zt = np.zeros(nv), np.zeros(nr)
    ev = np.eye(nv)
    et = np.eye(nr) if nr else np.zeros((0, 0))
    dv = np.stack([_term_row(spec, bar, k, -ev[c], zt, ev[c], zt) for c in range(nv)])
    dth = (
        np.stack([_term_row(spec, bar, k, zv, -et[c], zv, et[c]) for c in range(nr)])
        if nr else np.zeros((0, spec.n_joint_classes * spec.layout.per_joint), complex)
    )
    th_mean = (
        np.stack([_term_row(spec, bar, k, zv, 0.5 * et[c], zv, 0.5 * et[c]) for c in range(nr)])
        if nr else np.zeros((0, spec.n_joint_classes * spec.layout.per_joint), complex)
    )
    return dv, dth, th_mean


def assemble_dynamical_matrix(spec, k) -> np.ndarray:
    """Hermitian dynamical matrix D(k), size (N * per_joint)^2."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    size = spec.n_joint_classes * spec.layout.per_joint
    D = np.zeros((size, size), dtype=complex)
    V = spec.basis.volume
    for bar in spec.bars:
        terms = beam_energy_terms(bar.section, bar.length, bar.directors, spec.layout)
        for t in terms:
            if t.coefficient == 0.0:
                continue
            row = _term_row(spec, bar, k, t.wv_minus, t.wth_minus, t.wv_plus, t.wth_plus)
            D += (t.coefficient / V) * np.outer(row.conj(), row)
    return 0.5 * (D + D.conj().T)


def rotation_slot_mask(spec) -> np.ndarray:
    """Boolean mask of rotation components in the stacked DOF order."""
    p, nv = spec.layout.per_joint, spec.layout.n_defl
    one = np.zeros(p, dtype=bool)
    one[nv:] = True
    return np.tile(one, spec.n_joint_classes)


def _check_in_zone(spec, k) -> None:
    frac = spec.basis.fractional(np.atleast_1d(k))
    if np.any(np.abs(frac) > 0.5 + 1e-9):
        raise WavevectorOutsideBZ(
            f"wavevector with fractional coordinates {frac} leaves the fundamental cell"
        )


def scaled_dynamical_matrix(spec, k, eps: float) -> np.ndarray:
    """D_eps(k): rotation amplitudes rescaled by eps, overall 1/eps^2.

    Defined by ``D_eps(k) z . z* = eps^-2 D(eps k) (xi; eps eta) .
    (xi; eps eta)*``; requires ``eps > 0`` and ``eps k`` inside the
    fundamental dual cell.
    """
    if eps <= 0:
        raise ValidationError([Violation("BadScale", f"eps must be positive, got {eps}")])
    k = np.atleast_1d(np.asarray(k, dtype=float))
    _check_in_zone(spec, eps * k)
    return _scaled_dynamical_matrix(spec, k, eps)


def _scaled_dynamical_matrix(spec, k, eps: float) -> np.ndarray:
    """Signed-eps variant without zone checks (internal stencils)."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    s = np.where(rotation_slot_mask(spec), eps, 1.0)
    return np.outer(s, s) * assemble_dynamical_matrix(spec, eps * k) / eps**2


def dispersion(spec, k_path) -> np.ndarray:
    """Ascending eigenvalue branches of D(k) along a path.

    ``k_path`` is an (m, n) array of wavevectors; returns (m, N * per_joint)
    sorted eigenvalues (no eigenvector continuation across samples).
    """
    k_path = np.atleast_2d(np.asarray(k_path, dtype=float))
    out = np.empty((k_path.shape[0], spec.n_joint_classes * spec.layout.per_joint))
    for i, k in enumerate(k_path):
        out[i] = np.linalg.eigvalsh(assemble_dynamical_matrix(spec, k))
    return out


def torus_quadrature_weight(spec, periods) -> float:
    """Dual-grid quadrature weight 1/(V P^n) of the torus energy sum."""
    periods = _as_periods(periods, spec.dimension)
    return 1.0 / (spec.basis.volume * float(np.prod(periods)))


def torus_energy_fourier(spec, u: np.ndarray) -> float:
    """Elastic energy of a torus displacement field via the dual grid."""
    n = spec.dimension
    periods = u.shape[:n]
    u_hat = dft_forward(spec, u)
    k = torus_wavevectors(spec, periods).reshape(-1, n)
    uh = u_hat.reshape(len(k), -1)
    w = torus_quadrature_weight(spec, periods)
    total = 0.0
    for kk, zz in zip(k, uh):
        D = assemble_dynamical_matrix(spec, kk)
        total += 0.5 * w * float(np.real(zz.conj() @ (D @ zz)))
    return total


def zero_wavevector_guard(k) -> np.ndarray:
    k = np.atleast_1d(np.asarray(k, dtype=float))
    if np.linalg.norm(k) == 0.0:
        raise ZeroWavevector("k = 0 is excluded here")
    return k
