"""Beam section properties and per-bar elastic energies.

Every bar is a straight Euler-Bernoulli beam of constant cross section
joining two rigid joints.  Its quadratic energy is a short sum of squared
linear functionals of the twelve (3D), six (2D) or four/two (reduced 1D)
end degrees of freedom:

    E(U) = 1/2 sum_t  c_t * l_t(U)^2

with one axial term, up to one torsion and two bending terms, and up to
two terms coupling transverse deflection differences to mean end
rotations.  The table of pairs ``(c_t, l_t)`` produced by
:func:`beam_energy_terms` is the single source of truth for this energy;
the real-space stiffness matrices here and the Fourier-space assembly in
:mod:`lattice_homog.fourier` are both generated from it.

Degree-of-freedom order within one joint is deflections first, then
rotations. A bar's local array is ``U = (u_minus; u_plus)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonpositiveLength, ValidationError, Violation

ORTHO_TOL = 1e-12


@dataclass(frozen=True)
class DofLayout:
    """Per-joint degree-of-freedom layout.

    ``dim`` is the spatial dimension of the lattice geometry; ``n_defl``
    and ``n_rot`` count deflection and rotation components per joint.
    The reduced 1D layouts cover a purely axial chain (1 deflection) and
    a transversely deflecting chain (deflection + rotation).
    """

    dim: int
    n_defl: int
    n_rot: int

    @property
    def per_joint(self) -> int:
        return self.n_defl + self.n_rot

    @staticmethod
    def frame(dim: int) -> "DofLayout":
        if dim == 2:
            return DofLayout(2, 2, 1)
        if dim == 3:
            return DofLayout(3, 3, 3)
        raise ValueError(f"frame layout needs dim in {{2, 3}}, got {dim}")

    @staticmethod
    def axial_1d() -> "DofLayout":
        return DofLayout(1, 1, 0)

    @staticmethod
    def bending_1d() -> "DofLayout":
        return DofLayout(1, 1, 1)


@dataclass(frozen=True)
class BeamSection:
    """Section rigidities: axial EA, torsional GI1, bending EI2/EI3.

    GI1 and EI2 are meaningful only for 3D frames; 2D and reduced-1D
    bending uses EI3 (bending about the out-of-plane axis).
    """

    EA: float = 0.0
    GI1: float = 0.0
    EI2: float = 0.0
    EI3: float = 0.0

    def __post_init__(self):
        vals = (self.EA, self.GI1, self.EI2, self.EI3)
        if any(v < 0 for v in vals):
            raise ValidationError(
                [Violation("NegativeRigidity", f"section rigidities must be >= 0, got {vals}")]
            )
        if all(v == 0 for v in vals):
            raise ValidationError(
                [Violation("EmptySection", "at least one section rigidity must be positive")]
            )


@dataclass(frozen=True)
class EnergyTerm:
    """One squared functional c * (w_minus . u_minus + w_plus . u_plus)^2 / 2.

    ``kind`` labels the contribution for the axial/bending/coupling
    energy split; torsion counts as bending.
    """

    coefficient: float
    kind: str  # "axial" | "bending" | "coupling"
    wv_minus: np.ndarray
    wth_minus: np.ndarray
    wv_plus: np.ndarray
    wth_plus: np.ndarray

    def row(self, layout: DofLayout) -> np.ndarray:
        """Local row vector over U = (u_minus; u_plus)."""
        return np.concatenate(
            [self.wv_minus, self.wth_minus, self.wv_plus, self.wth_plus]
        )


def beam_energy_terms(section: BeamSection, length: float, directors, layout: DofLayout):
    """Energy term table of one bar in global coordinates.

    ``directors`` is the orthonormal frame of the bar: ``(d1,)`` for
    1D, ``(d1, d2)`` for 2D, ``(d1, d2, d3)`` for 3D, with d1 the unit
    axis vector.
    """
    if length <= 0:
        raise NonpositiveLength(f"bar length must be positive, got {length}")
    L = float(length)
    terms = []

    if layout.dim == 1:
        s = float(directors[0][0])  # +-1, orientation of the axis
        if layout.n_rot == 0:
            terms.append(EnergyTerm(
                section.EA / L, "axial",
                np.array([-s]), np.zeros(0), np.array([s]), np.zeros(0)))
            return terms
        # transversely deflecting chain: bending + coupling only
        terms.append(EnergyTerm(
            section.EI3 / L, "bending",
            np.zeros(1), np.array([-1.0]), np.zeros(1), np.array([1.0])))
        terms.append(EnergyTerm(
            12.0 * section.EI3 / L, "coupling",
            np.array([-s / L]), np.array([-0.5]), np.array([s / L]), np.array([-0.5])))
        return terms

    if layout.dim == 2:
        d1, d2 = directors
        z2 = np.zeros(2)
        terms.append(EnergyTerm(
            section.EA / L, "axial", -d1, np.zeros(1), d1, np.zeros(1)))
        terms.append(EnergyTerm(
            section.EI3 / L, "bending", z2, np.array([-1.0]), z2, np.array([1.0])))
        terms.append(EnergyTerm(
            12.0 * section.EI3 / L, "coupling",
            -d2 / L, np.array([-0.5]), d2 / L, np.array([-0.5])))
        return terms

    d1, d2, d3 = directors
    z3 = np.zeros(3)
    terms.append(EnergyTerm(section.EA / L, "axial", -d1, z3, d1, z3))
    terms.append(EnergyTerm(section.GI1 / L, "bending", z3, -d1, z3, d1))
    terms.append(EnergyTerm(section.EI2 / L, "bending", z3, -d2, z3, d2))
    terms.append(EnergyTerm(section.EI3 / L, "bending", z3, -d3, z3, d3))
    # transverse/rotation coupling; note the sign difference between planes
    terms.append(EnergyTerm(
        12.0 * section.EI2 / L, "coupling", -d3 / L, 0.5 * d2, d3 / L, 0.5 * d2))
    terms.append(EnergyTerm(
        12.0 * section.EI3 / L, "coupling", -d2 / L, -0.5 * d3, d2 / L, -0.5 * d3))
    return terms


def _stiffness_from_terms(terms, layout: DofLayout) -> np.ndarray:
    m = 2 * layout.per_joint
    S = np.zeros((m, m))
    for t in terms:
        g = t.row(layout)
        S += t.coefficient * np.outer(g, g)
    return 0.5 * (S + S.T)


def reference_stiffness_2d(section: BeamSection, length: float) -> np.ndarray:
    """6x6 stiffness of a 2D beam spanning [0, L] along the x1 axis.

    DOF order: (v1-, v2-, th-, v1+, v2+, th+).
    """
    layout = DofLayout.frame(2)
    dirs = (np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    return _stiffness_from_terms(beam_energy_terms(section, length, dirs, layout), layout)


def reference_stiffness_3d(section: BeamSection, length: float) -> np.ndarray:
    """12x12 stiffness of a 3D beam spanning [0, L] along the x1 axis.

    DOF order: (v1-, v2-, v3-, th1-, th2-, th3-, v1+, ..., th3+).
    """
    layout = DofLayout.frame(3)
    dirs = (np.eye(3)[0], np.eye(3)[1], np.eye(3)[2])
    return _stiffness_from_terms(beam_energy_terms(section, length, dirs, layout), layout)


def _director_matrix(directors) -> np.ndarray:
    Q = np.vstack(directors)
    G = Q @ Q.T
    if not np.allclose(G, np.eye(len(directors)), atol=1e-9):
        raise ValidationError(
            [Violation("NonOrthonormalDirectors", f"director Gram matrix {G} != I")]
        )
    return Q


def transform_stiffness(S_ref: np.ndarray, directors) -> np.ndarray:
    """Rotate a reference stiffness into the global frame: T^T S_ref T.

    T maps global DOFs to bar-frame DOFs by the director matrix; for 2D
    the scalar rotation DOF is untouched.
    """
    Q = _director_matrix(directors)
    n = Q.shape[0]
    if n == 2:
        blocks = [Q, np.eye(1), Q, np.eye(1)]
    elif n == 3:
        blocks = [Q, Q, Q, Q]
    else:
        raise ValueError("transform_stiffness supports 2D and 3D frames")
    from scipy.linalg import block_diag

    T = block_diag(*blocks)
    return T.T @ S_ref @ T


def bar_stiffness_global(spec, beta: int) -> np.ndarray:
    """Global-frame stiffness of bar class ``beta`` of ``spec``."""
    bar = spec.bars[beta]
    terms = beam_energy_terms(bar.section, bar.length, bar.directors, spec.layout)
    return _stiffness_from_terms(terms, spec.layout)


@dataclass(frozen=True)
class BarEnergy:
    total: float
    axial: float
    bending: float
    coupling: float
    axial_strain: float
    bending_strain: np.ndarray  # one bending-strain component per rotation DOF


def bar_energy_global(spec, beta: int, U: np.ndarray) -> BarEnergy:
    """Energy of one bar, evaluated functional by functional.

    ``U = (u_minus; u_plus)`` stacks both end joints.  Returns the
    axial/bending/coupling split and the axial and bending strain
    diagnostics of the bar.
    """
    bar = spec.bars[beta]
    layout = spec.layout
    U = np.asarray(U, dtype=float)
    if U.shape != (2 * layout.per_joint,):
        raise ValueError(f"expected U of length {2 * layout.per_joint}, got {U.shape}")
    parts = {"axial": 0.0, "bending": 0.0, "coupling": 0.0}
    for t in beam_energy_terms(bar.section, bar.length, bar.directors, layout):
        val = t.row(layout) @ U
        parts[t.kind] += 0.5 * t.coefficient * val * val

    nv, nr, p = layout.n_defl, layout.n_rot, layout.per_joint
    dv = U[p:p + nv] - U[:nv]
    dth = U[p + nv:] - U[nv:p]
    if layout.dim == 1:
        axial_strain = float(bar.directors[0][0] * dv[0]) / bar.length if nr == 0 else 0.0
    else:
        axial_strain = float(dv @ bar.directors[0]) / bar.length
    bending_strain = dth / bar.length
    return BarEnergy(
        total=sum(parts.values()),
        axial=parts["axial"],
        bending=parts["bending"],
        coupling=parts["coupling"],
        axial_strain=axial_strain,
        bending_strain=bending_strain,
    )


def rigid_motion_basis(layout: DofLayout, positions: np.ndarray) -> np.ndarray:
    """Basis of rigid motions for joints at ``positions`` (rows).

    Columns are translations followed by linearized rotations; rotations
    set v = w x and th = axial(w) at every joint.  Shape
    ``(n_joints * per_joint, n_defl + n_rot)``.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    nj = positions.shape[0]
    p = layout.per_joint
    cols = []
    for c in range(layout.n_defl):
        v = np.zeros((nj, p))
        v[:, c] = 1.0
        cols.append(v.reshape(-1))
    if layout.n_rot:
        if layout.dim == 2:
            gens = [np.array([[0.0, -1.0], [1.0, 0.0]])]
        elif layout.dim == 3:
            gens = [np.zeros((3, 3)) for _ in range(3)]
            gens[0][2, 1], gens[0][1, 2] = 1.0, -1.0
            gens[1][0, 2], gens[1][2, 0] = 1.0, -1.0
            gens[2][1, 0], gens[2][0, 1] = 1.0, -1.0
        else:
            # deflecting chain: tilting about the origin is rigid
            gens = [np.array([[1.0]])]
        for a, w in enumerate(gens):
            v = np.zeros((nj, p))
            v[:, :layout.n_defl] = positions @ w.T
            v[:, layout.n_defl + a] = 1.0
            cols.append(v.reshape(-1))
    if not cols:
        return np.zeros((nj * p, 0))
    return np.stack(cols, axis=1)
