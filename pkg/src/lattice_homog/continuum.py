"""Continuum limit: localized compliance limit, effective micropolar moduli.

The homogenized (continuum) dynamical matrix at wavevector k is

    D0(k) = ( lim_{eps -> 0}  L^T D_eps(k)^{-1} L )^{-1}

with the localization matrix ``L`` stacking ``(1/N) I`` once per joint
class; the inner limit performs the relaxation over the per-cell degrees
of freedom.  For a single joint class L is the identity and D0 is the
plain pointwise limit of ``D_eps``, which exists even when the limit
matrix is singular (unstable limit), so that route is primary for N=1.

Limits are taken by Richardson extrapolation on a geometric eps
sequence.  Conjugate symmetry ``D(-k) = conj(D(k))`` makes the sequence
exactly parity-symmetric, ``M(-eps) = J conj(M(eps)) J`` with J = -1 on
rotation slots: every real component of M is an even or an odd function
of eps, odd components vanish in the limit, and even components are
extrapolated in powers of eps^2.

The limit is positively homogeneous in the mixed sense
``D0(lam k) z . z* = D0(k) (lam xi; eta) . (lam xi; eta)*``; as a
consequence it is generated by a quadratic energy density W0 in the
deflection gradient and the rotation vector.  Frame indifference
reduces W0 to a function of the symmetric strain (engineering Voigt
vector) and the rotation mismatch ``r = theta - axial(skw(grad v))``:

    W0 = 1/2 eps_s . C eps_s + 1/2 r . H r + eps_s . G r

:func:`extract_effective_moduli` recovers (C, H, G) from sampled D0
matrices by linear least squares over a polarization probe design.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from ._util import parallel_map
from .errors import (
    IllConditionedFit,
    NoConvergence,
    RepresentationFailure,
    SingularLimit,
    UnsupportedJointCount,
    ZeroWavevector,
)
from .fourier import (
    _scaled_dynamical_matrix,
    rotation_slot_mask,
    zero_wavevector_guard,
)

__all__ = [
    "LimitConfig",
    "FitConfig",
    "localization_matrix",
    "continuum_dynamical_matrix",
    "check_equicoercivity",
    "check_homogeneity",
    "extract_effective_moduli",
    "continuum_energy_density",
    "higher_order_matrix",
    "strain_feature_map",
    "voigt_dim",
    "probe_vectors",
]


@dataclass(frozen=True)
class LimitConfig:
    """Controls the eps -> 0 extrapolation.

    ``eps0_factor`` sets the coarsest scale via
    ``eps0 * |k| = eps0_factor * (BZ inradius)``; each further level
    halves eps.
    """

    eps0_factor: float = 0.1
    levels: int = 6
    tol_extrap: float = 1e-8
    tol_cross: float = 1e-8


def localization_matrix(spec) -> np.ndarray:
    """(N * per_joint) x per_joint matrix stacking (1/N) I per class."""
    d = spec.layout.per_joint
    return np.tile(np.eye(d), (spec.n_joint_classes, 1)) / spec.n_joint_classes


def _parity_split(M: np.ndarray, jsign: np.ndarray):
    """Even/odd split of M under M -> J conj(M) J."""
    JMJ = jsign[:, None] * M.conj() * jsign[None, :]
    return 0.5 * (M + JMJ), 0.5 * (M - JMJ)


def _richardson_even(seq):
    """Diagonal Richardson for matrices with expansions in eps^2,
    sampled at eps_j = eps0 * 2^-j.  Returns (limit, residual)."""
    cur = [np.asarray(m) for m in seq]
    order = 2
    prev_best = cur[-1]
    while len(cur) > 1:
        f = 2.0 ** order
        prev_best = cur[-1]
        cur = [(f * cur[j + 1] - cur[j]) / (f - 1.0) for j in range(len(cur) - 1)]
        order += 2
    best = cur[0]
    scale = max(float(np.linalg.norm(best)), 1e-300)
    return best, float(np.linalg.norm(best - prev_best)) / scale


def _extrapolate_sequence(seq, jsign):
    """Parity-aware limit of a matrix sequence M(eps_j).

    Odd components converge to zero exactly; even components go through
    the eps^2 Richardson ladder.  Returns (limit, residual, odd_size)."""
    evens, odd_size = [], 0.0
    for M in seq:
        e, o = _parity_split(M, jsign)
        evens.append(e)
        odd_size = max(odd_size, float(np.linalg.norm(o)))
    limit, resid = _richardson_even(evens)
    scale = max(float(np.linalg.norm(limit)), 1e-300)
    return limit, resid, odd_size / scale


@dataclass(frozen=True, eq=False)
class ContinuumLimit:
    """D0 at one wavevector plus extrapolation diagnostics."""

    k: np.ndarray
    matrix: np.ndarray
    eps_sequence: np.ndarray
    residual: float
    route: str  # "pointwise" (N=1) or "localized"
    cross_residual: float | None = None


def _jsign(spec) -> np.ndarray:
    return np.where(rotation_slot_mask(spec), -1.0, 1.0)


def _jsign_reduced(spec) -> np.ndarray:
    d = spec.layout.per_joint
    s = np.ones(d)
    s[spec.layout.n_defl:] = -1.0
    return s


def _eps_sequence(spec, k, config: LimitConfig) -> np.ndarray:
    eps0 = config.eps0_factor * spec.basis.bz_inradius() / float(np.linalg.norm(k))
    return eps0 * 0.5 ** np.arange(config.levels)


def _localized_compliance(spec, k, eps, L) -> np.ndarray:
    D = _scaled_dynamical_matrix(spec, k, eps)
    evals = np.linalg.eigvalsh(D)
    if evals[0] <= 1e-14 * max(evals[-1], 1e-300):
        raise SingularLimit(
            f"scaled dynamical matrix is singular at eps={eps:g} (mechanism present)"
        )
    return L.T @ np.linalg.solve(D, L)


def continuum_dynamical_matrix(spec, k, config: LimitConfig | None = None) -> ContinuumLimit:
    """Homogenized dynamical matrix D0(k) for k != 0.

    For N >= 2 extrapolates the localized compliance and inverts it.
    For N = 1 extrapolates D_eps(k) pointwise (defined even for
    unstable limits) and, when the compliance route also converges,
    cross-checks both routes against each other.
    """
    config = config or LimitConfig()
    k = zero_wavevector_guard(k)
    eps_seq = _eps_sequence(spec, k, config)
    jsign = _jsign(spec)

    if spec.n_joint_classes == 1:
        seq = [_scaled_dynamical_matrix(spec, k, e) for e in eps_seq]
        D0, resid, _ = _extrapolate_sequence(seq, jsign)
        if resid > config.tol_extrap:
            raise NoConvergence(
                f"pointwise limit residual {resid:.3e} above {config.tol_extrap:g}"
            )
        cross = None
        try:
            L = localization_matrix(spec)
            Mseq = [_localized_compliance(spec, k, e, L) for e in eps_seq]
            M0, mres, _ = _extrapolate_sequence(Mseq, _jsign_reduced(spec))
            if mres <= config.tol_extrap:
                D0_inv_route = np.linalg.inv(M0)
                cross = float(
                    np.linalg.norm(D0_inv_route - D0) / max(np.linalg.norm(D0), 1e-300)
                )
                if cross > config.tol_cross:
                    raise NoConvergence(
                        f"pointwise and compliance routes disagree: {cross:.3e}"
                    )
        except (SingularLimit, np.linalg.LinAlgError):
            # unstable limit: compliance diverges while D_eps still converges
            cross = None
        D0 = 0.5 * (D0 + D0.conj().T)
        return ContinuumLimit(k, D0, eps_seq, resid, "pointwise", cross)

    L = localization_matrix(spec)
    Mseq = [_localized_compliance(spec, k, e, L) for e in eps_seq]
    M0, resid, _ = _extrapolate_sequence(Mseq, _jsign_reduced(spec))
    if resid > config.tol_extrap:
        raise NoConvergence(
            f"localized compliance residual {resid:.3e} above {config.tol_extrap:g}"
        )
    evals = np.linalg.eigvalsh(0.5 * (M0 + M0.conj().T))
    if evals[0] <= 1e-12 * max(evals[-1], 1e-300):
        raise SingularLimit("extrapolated localized compliance is not invertible")
    D0 = np.linalg.inv(M0)
    D0 = 0.5 * (D0 + D0.conj().T)
    return ContinuumLimit(k, D0, eps_seq, resid, "localized")


# ---------------------------------------------------------------------------
# Stability and structure checks


@dataclass(frozen=True, eq=False)
class EquicoercivityReport:
    """min over probes of D_eps z.z* / (|k|^2 |xi|^2 + |eta|^2)."""

    constant: float
    table: tuple  # rows (k, eps, c)

    def per_eps_minima(self) -> dict:
        out: dict = {}
        for k, eps, c in self.table:
            out[eps] = min(out.get(eps, np.inf), c)
        return out


def check_equicoercivity(spec, k_samples, eps_samples) -> EquicoercivityReport:
    """Estimate the uniform stability constant over a (k, eps) sweep.

    A nonpositive constant is returned as a finding, never raised.
    """
    rot = rotation_slot_mask(spec)
    rows = []
    for k in np.atleast_2d(np.asarray(k_samples, dtype=float)):
        zero_wavevector_guard(k)
        k2 = float(k @ k)
        wdiag = np.where(rot, 1.0, k2)
        for eps in eps_samples:
            D = _scaled_dynamical_matrix(spec, k, float(eps))
            w = 1.0 / np.sqrt(wdiag)
            A = w[:, None] * D * w[None, :]
            cmin = float(np.linalg.eigvalsh(0.5 * (A + A.conj().T))[0])
            rows.append((k.copy(), float(eps), cmin))
    return EquicoercivityReport(min(r[2] for r in rows), tuple(rows))


def check_homogeneity(spec, k, lam: float, config: LimitConfig | None = None,
                      probes=None) -> float:
    """Max relative mismatch of D0(lam k) z.z* vs D0(k)(lam xi; eta)...

    Zero for an exact limit; defaults to the full polarization probe
    basis.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    k = zero_wavevector_guard(k)
    d = spec.layout.per_joint
    D_lam = continuum_dynamical_matrix(spec, lam * k, config).matrix
    D_one = continuum_dynamical_matrix(spec, k, config).matrix
    scale_vec = np.ones(d)
    scale_vec[:spec.layout.n_defl] = lam
    probes = probe_vectors(d) if probes is None else probes
    scale = max(float(np.linalg.norm(D_lam)), 1e-300)
    worst = 0.0
    for z in probes:
        lhs = float(np.real(z.conj() @ (D_lam @ z)))
        zs = scale_vec * z
        rhs = float(np.real(zs.conj() @ (D_one @ zs)))
        worst = max(worst, abs(lhs - rhs) / (scale * float(np.real(z.conj() @ z))))
    return worst


# ---------------------------------------------------------------------------
# Voigt algebra and the micropolar feature map


def voigt_dim(n: int) -> int:
    return {1: 1, 2: 3, 3: 6}[n]


_VOIGT_PAIRS = {
    1: ((0, 0),),
    2: ((0, 0), (1, 1), (0, 1)),
    3: ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)),
}


def sym_to_voigt(E: np.ndarray) -> np.ndarray:
    """Symmetric matrix -> engineering Voigt vector (doubled shears)."""
    n = E.shape[0]
    return np.array(
        [E[i, j] if i == j else E[i, j] + E[j, i] for (i, j) in _VOIGT_PAIRS[n]]
    )


def axial_vector(W: np.ndarray) -> np.ndarray:
    """Rotation vector of a skew matrix (scalar W[1,0] in 2D)."""
    n = W.shape[0]
    if n == 2:
        return np.array([W[1, 0]])
    if n == 3:
        return np.array([W[2, 1], W[0, 2], W[1, 0]])
    return np.zeros(0)


def strain_feature_map(k, layout) -> np.ndarray:
    """Linear map A(k): amplitude z = (xi; eta) -> (voigt strain; mismatch).

    Uses the package Fourier convention, under which a plane wave with
    amplitude xi carries the deflection gradient ``-i xi kron k``.
    Shape ``(voigt_dim + n_rot, per_joint)``, complex.
    """
    k = np.atleast_1d(np.asarray(k, dtype=float))
    n = layout.dim
    nv, nr = layout.n_defl, layout.n_rot
    if n == 1 and nr > 0:
        raise RepresentationFailure(
            "the deflecting chain has no frame-indifferent strain representation"
        )
    A = np.zeros((voigt_dim(n) + nr, nv + nr), dtype=complex)
    for row, (i, j) in enumerate(_VOIGT_PAIRS[n]):
        if i == j:
            A[row, i] = -1j * k[i]
        else:
            A[row, i] += -1j * k[j]
            A[row, j] += -1j * k[i]
    if nr:
        base = voigt_dim(n)
        # r = eta - axial(skw(-i xi kron k))
        if n == 2:
            A[base, 0] += 0.5j * k[1]
            A[base, 1] += -0.5j * k[0]
        else:
            A[base + 0, 2] += 0.5j * k[1]
            A[base + 0, 1] += -0.5j * k[2]
            A[base + 1, 0] += 0.5j * k[2]
            A[base + 1, 2] += -0.5j * k[0]
            A[base + 2, 1] += 0.5j * k[0]
            A[base + 2, 0] += -0.5j * k[1]
        A[base:, nv:] = np.eye(nr)
    return A


def probe_vectors(d: int):
    """Canonical basis plus pairwise polarization combinations."""
    out = [np.eye(d, dtype=complex)[i] for i in range(d)]
    for a in range(d):
        for b in range(a + 1, d):
            e = np.zeros(d, dtype=complex)
            e[a] = 1.0
            e[b] = 1.0
            out.append(e)
            e = np.zeros(d, dtype=complex)
            e[a] = 1.0
            e[b] = 1j
            out.append(e.copy())
    return out


def default_directions(n: int, alternate: bool = False) -> np.ndarray:
    """Unit-sphere design: 8 angles (2D), axes + face + body diagonals (3D)."""
    if n == 1:
        return np.array([[1.0]]) if not alternate else np.array([[-1.0]])
    if n == 2:
        offs = 0.5 if alternate else 0.0
        ang = (np.arange(8) + offs) * np.pi / 8.0
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    dirs = [
        (1, 0, 0), (0, 1, 0), (0, 0, 1),
        (1, 1, 0), (1, -1, 0), (1, 0, 1), (1, 0, -1), (0, 1, 1), (0, 1, -1),
        (1, 1, 1), (1, -1, 1), (1, 1, -1), (-1, 1, 1),
    ]
    out = np.array(dirs, dtype=float)
    out /= np.linalg.norm(out, axis=1)[:, None]
    if alternate:
        rot = scipy.linalg.expm(
            np.array([[0.0, -0.3, 0.2], [0.3, 0.0, -0.4], [-0.2, 0.4, 0.0]])
        )
        out = out @ rot.T
    return out


@dataclass(frozen=True)
class FitConfig:
    tol_fit: float = 1e-6
    tol_symmetry: float = 1e-8
    cond_limit: float = 1e10
    alternate_design: bool = False
    limit: LimitConfig = field(default_factory=LimitConfig)
    jobs: int | None = 1


@dataclass(frozen=True, eq=False)
class EffectiveModuli:
    """Quadratic coefficients of the homogenized energy density.

    ``C`` acts on the engineering Voigt strain, ``H`` on the rotation
    mismatch, ``G`` couples them.  ``residual`` is the relative
    least-squares misfit of the micropolar ansatz.
    """

    dimension: int
    C: np.ndarray
    H: np.ndarray
    G: np.ndarray
    residual: float
    condition: float
    symmetry: str
    layout: object
    cell_volume: float = 1.0

    @property
    def quadratic_form(self) -> np.ndarray:
        nv = voigt_dim(self.dimension)
        nr = self.H.shape[0]
        Q = np.zeros((nv + nr, nv + nr))
        Q[:nv, :nv] = self.C
        Q[nv:, nv:] = self.H
        Q[:nv, nv:] = self.G
        Q[nv:, :nv] = self.G.T
        return Q

    def dynamical_matrix(self, k) -> np.ndarray:
        """Continuum dynamical matrix this energy density generates."""
        A = strain_feature_map(k, self.layout)
        return A.conj().T @ self.quadratic_form @ A


def continuum_energy_density(moduli: EffectiveModuli, beta: np.ndarray, theta) -> float:
    """W0 at deflection gradient ``beta`` and rotation vector ``theta``."""
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    eps_s = sym_to_voigt(0.5 * (beta + beta.T))
    r = np.atleast_1d(np.asarray(theta, dtype=float)) - axial_vector(
        0.5 * (beta - beta.T)
    )
    x = np.concatenate([eps_s, r])
    return 0.5 * float(x @ (moduli.quadratic_form @ x))


def _fit_rows(x: np.ndarray, index_pairs):
    row = np.empty(len(index_pairs))
    for c, (i, j) in enumerate(index_pairs):
        row[c] = 0.5 * abs(x[i]) ** 2 if i == j else float(np.real(np.conj(x[i]) * x[j]))
    return row


def extract_effective_moduli(spec, config: FitConfig | None = None) -> EffectiveModuli:
    """Fit (C, H, G) to sampled homogenized dynamical matrices.

    Samples D0 over a unit-sphere direction design, probes each matrix
    with basis and polarization amplitudes, and solves the
    overdetermined real linear system equating the quadratic-form
    values to the micropolar ansatz.
    """
    config = config or FitConfig()
    layout = spec.layout
    n = layout.dim
    dirs = default_directions(n, config.alternate_design)
    d = layout.per_joint
    nv, nr = voigt_dim(n), layout.n_rot
    nq = nv + nr
    index_pairs = [(i, j) for i in range(nq) for j in range(i, nq)]
    probes = probe_vectors(d)

    limits = parallel_map(
        lambda kh: continuum_dynamical_matrix(spec, kh, config.limit).matrix,
        dirs,
        config.jobs,
    )

    rows, vals = [], []
    for kh, D0 in zip(dirs, limits):
        A = strain_feature_map(kh, layout)
        for z in probes:
            rows.append(_fit_rows(A @ z, index_pairs))
            vals.append(0.5 * float(np.real(z.conj() @ (D0 @ z))))
    Amat = np.asarray(rows)
    b = np.asarray(vals)
    cond = float(np.linalg.cond(Amat)) ** 2  # condition of the normal equations
    if cond > config.cond_limit:
        raise IllConditionedFit(f"normal-equation condition {cond:.3e} exceeds limit")
    q, *_ = np.linalg.lstsq(Amat, b, rcond=None)
    residual = float(np.linalg.norm(Amat @ q - b) / max(np.linalg.norm(b), 1e-300))
    if residual > config.tol_fit:
        raise RepresentationFailure(
            f"micropolar ansatz misfit {residual:.3e} above {config.tol_fit:g}"
        )
    Q = np.zeros((nq, nq))
    for (i, j), v in zip(index_pairs, q):
        Q[i, j] = v
        Q[j, i] = v
    C = Q[:nv, :nv]
    H = Q[nv:, nv:]
    G = Q[:nv, nv:]
    sym = classify_elastic_symmetry(C, n, config.tol_symmetry)
    return EffectiveModuli(n, C, H, G, residual, cond, sym, layout, spec.basis.volume)


# ---------------------------------------------------------------------------
# Elastic symmetry classification


def _voigt_to_tensor(C: np.ndarray, n: int) -> np.ndarray:
    pairs = _VOIGT_PAIRS[n]
    T = np.zeros((n,) * 4)
    for a, (i, j) in enumerate(pairs):
        for b, (k, l) in enumerate(pairs):
            val = C[a, b]
            for (p, q) in {(i, j), (j, i)}:
                for (r, s) in {(k, l), (l, k)}:
                    T[p, q, r, s] = val
    return T


def _tensor_to_voigt(T: np.ndarray, n: int) -> np.ndarray:
    pairs = _VOIGT_PAIRS[n]
    C = np.zeros((len(pairs), len(pairs)))
    for a, (i, j) in enumerate(pairs):
        for b, (k, l) in enumerate(pairs):
            C[a, b] = T[i, j, k, l]
    return C


def rotate_voigt(C: np.ndarray, R: np.ndarray) -> np.ndarray:
    n = R.shape[0]
    T = _voigt_to_tensor(C, n)
    Tr = np.einsum("ia,jb,kc,ld,abcd->ijkl", R, R, R, R, T)
    return _tensor_to_voigt(Tr, n)


def _rotation_2d(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def classify_elastic_symmetry(C: np.ndarray, n: int, tol: float = 1e-8) -> str:
    """"isotropic", "cubic" (square symmetry in 2D) or "none"."""
    scale = max(float(np.linalg.norm(C)), 1e-300)

    def invariant(R):
        return float(np.linalg.norm(rotate_voigt(C, R) - C)) / scale <= tol

    if n == 1:
        return "isotropic"
    if n == 2:
        generic = [_rotation_2d(a) for a in (0.7, 1.9, 2.6)]
        if all(invariant(R) for R in generic):
            return "isotropic"
        if invariant(_rotation_2d(np.pi / 2)):
            return "cubic"
        return "none"
    generic = []
    rng = np.random.default_rng(20240817)
    for _ in range(3):
        Wm = rng.normal(size=(3, 3))
        Wm = Wm - Wm.T
        generic.append(scipy.linalg.expm(Wm))
    if all(invariant(R) for R in generic):
        return "isotropic"
    Rz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
    if invariant(Rz) and invariant(Rx):
        return "cubic"
    return "none"


# ---------------------------------------------------------------------------
# Higher-order expansion of the compliance (single joint class)


def higher_order_matrix(spec, k, eps: float, alpha: int,
                        config: LimitConfig | None = None) -> np.ndarray:
    """Truncated small-eps expansion of the compliance, inverted.

    Builds the Taylor polynomial of ``D_eps(k)^{-1}`` at eps = 0 up to
    order ``alpha`` (central finite differences with Richardson
    refinement in the step) and returns its inverse at the given eps.
    Only defined for lattices with one joint class.
    """
    if spec.n_joint_classes != 1:
        raise UnsupportedJointCount("expansion requires a single joint class")
    if alpha not in (0, 1, 2, 3, 4):
        raise ValueError("alpha must be in 0..4")
    config = config or LimitConfig()
    k = zero_wavevector_guard(k)

    lim = continuum_dynamical_matrix(spec, k, config)
    evals = np.linalg.eigvalsh(lim.matrix)
    if evals[0] <= 1e-12 * max(evals[-1], 1e-300):
        raise SingularLimit("compliance has no expansion: the limit matrix is singular")
    coeffs = [np.linalg.inv(lim.matrix)]

    if alpha >= 1:
        h0 = 1e-2 * spec.basis.bz_inradius() / float(np.linalg.norm(k))
        levels = 4

        def G(e):
            return np.linalg.inv(_scaled_dynamical_matrix(spec, k, e))

        cache: dict = {}

        def g(e):
            key = round(e / h0, 12)
            if key not in cache:
                cache[key] = G(e)
            return cache[key]

        stencils = {
            1: lambda h: (g(h) - g(-h)) / (2 * h),
            2: lambda h: (g(h) - 2 * coeffs[0] + g(-h)) / h**2,
            3: lambda h: (g(2 * h) - 2 * g(h) + 2 * g(-h) - g(-2 * h)) / (2 * h**3),
            4: lambda h: (g(2 * h) - 4 * g(h) + 6 * coeffs[0] - 4 * g(-h) + g(-2 * h)) / h**4,
        }
        fact = 1.0
        for m in range(1, alpha + 1):
            fact *= m
            approx = [stencils[m](h0 * 0.5 ** j) for j in range(levels)]
            deriv, _ = _richardson_even(approx)
            coeffs.append(deriv / fact)

    series = sum(c * float(eps) ** m for m, c in enumerate(coeffs))
    series = 0.5 * (series + series.conj().T)
    evals = np.linalg.eigvalsh(series)
    if np.abs(evals).min() <= 1e-12 * max(np.abs(evals).max(), 1e-300):
        raise SingularLimit("truncated compliance series is not invertible at this eps")
    return np.linalg.inv(series)
