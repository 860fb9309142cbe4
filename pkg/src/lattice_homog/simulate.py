"""Direct discrete solves on finite metastructures.

Two finite realizations are supported:

* :class:`TorusMetastructure` — ``P`` cells per dimension with periodic
  wraparound.  The lattice Fourier transform diagonalizes the stiffness
  exactly, so equilibrium is solved mode by mode; small instances are
  cross-checked against a sparse real-space solve.
* :class:`BoundedMetastructure` — every bar whose closed segment lies in
  a convex domain.  Equilibrium is a sparse symmetric solve with rigid
  modes either pinned or projected out.

Loads are continuum force/moment densities ``f``; each joint receives
the generalized force ``(V/N) f(x)`` (volume per joint class).  Torus
loads must be balanced: any k = 0 Fourier component is rejected.

The discrete-to-continuum study drives a fixed macroscopic load through
a sequence of torus sizes ``P = 1/eps``.  In scaled macroscopic
variables the load mode ``(kappa, amplitude)`` maps to the physical
torus mode ``(eps kappa, (eps A_defl; A_rot))`` and the scaled minimum
potential equals ``eps^n`` times the physical one; the study reports
that scaled minimum next to its continuum value ``-V/2 sum_j
D0(kappa_j)^{-1} A_j . A_j*``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from ._util import fmt_float
from .beams import bar_stiffness_global, beam_energy_terms, rigid_motion_basis
from .continuum import LimitConfig, continuum_dynamical_matrix
from .errors import (
    EmptyStructure,
    SingularMode,
    SingularSystem,
    UnbalancedLoad,
    ValidationError,
    Violation,
)
from .fourier import (
    assemble_dynamical_matrix,
    dft_forward,
    dft_inverse,
    torus_wavevectors,
)
from .lattice import joint_position

__all__ = [
    "LoadField",
    "TorusMetastructure",
    "BoundedMetastructure",
    "Box",
    "ConvexPolytope",
    "apply_loads",
    "solve_equilibrium_torus",
    "build_bounded",
    "solve_equilibrium_bounded",
    "continuum_min_energy",
    "convergence_study",
    "torus_energy_breakdown",
    "write_displacement_csv",
]


# ---------------------------------------------------------------------------
# Loads


@dataclass(frozen=True, eq=False)
class LoadField:
    """Force/moment density as a finite list of Fourier modes.

    ``modes`` is a sequence of ``(k, amplitude)`` with ``amplitude`` a
    complex per-joint generalized-force vector; the synthesized field is
    ``f(x) = sum_j A_j exp(i k_j . x)`` and must be real, so modes must
    come in conjugate pairs.  A callable ``sampler`` may be given
    instead (bounded domains only).
    """

    modes: tuple = ()
    sampler: object = None

    def __post_init__(self):
        norm_modes = []
        for k, amp in self.modes:
            k = np.atleast_1d(np.asarray(k, dtype=float)).copy()
            amp = np.atleast_1d(np.asarray(amp, dtype=complex)).copy()
            k.setflags(write=False)
            amp.setflags(write=False)
            norm_modes.append((k, amp))
        object.__setattr__(self, "modes", tuple(norm_modes))
        if self.modes:
            scale = max(np.linalg.norm(a) for _, a in self.modes)
            kscale = max(np.linalg.norm(k) for k, _ in self.modes)
            for k, _ in self.modes:
                if np.linalg.norm(k) <= 1e-12 * max(kscale, 1.0):
                    raise UnbalancedLoad("a k = 0 load mode has nonzero mean force/moment")
            for k, amp in self.modes:
                partner = [a for kk, a in self.modes if np.allclose(kk, -k, atol=1e-12)]
                if not partner or not any(
                    np.allclose(a, amp.conj(), atol=1e-12 * scale) for a in partner
                ):
                    raise ValidationError(
                        [Violation("ComplexLoad", "load modes must be conjugate-paired")]
                    )

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.sampler is not None:
            return np.asarray(self.sampler(x), dtype=float)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        total = None
        for k, amp in self.modes:
            term = amp * np.exp(1j * float(k @ x))
            total = term if total is None else total + term
        return np.real(total)


def scaled_load(load: LoadField, eps: float, n_defl: int) -> LoadField:
    """Macroscopic load mapped to the physical torus at scale eps."""
    modes = []
    for k, amp in load.modes:
        a = amp.copy()
        a[:n_defl] *= eps
        modes.append((eps * k, a))
    return LoadField(tuple(modes))


# ---------------------------------------------------------------------------
# Torus metastructures


@dataclass(frozen=True, eq=False)
class TorusMetastructure:
    spec: object
    periods: tuple

    def __post_init__(self):
        n = self.spec.dimension
        p = self.periods
        p = (int(p),) * n if np.isscalar(p) else tuple(int(x) for x in p)
        if len(p) != n or any(x < 1 for x in p):
            raise ValidationError([Violation("BadPeriods", f"bad torus periods {p}")])
        object.__setattr__(self, "periods", p)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.periods))

    @property
    def joint_count(self) -> int:
        return self.n_cells * self.spec.n_joint_classes

    @property
    def bar_count(self) -> int:
        return self.n_cells * self.spec.n_bar_classes

    def joint_positions(self) -> np.ndarray:
        """(*P, N, n) array of joint coordinates."""
        spec = self.spec
        n = spec.dimension
        cells = np.stack(
            np.meshgrid(*[np.arange(p) for p in self.periods], indexing="ij"), axis=-1
        ).astype(float)
        base = cells @ spec.basis.vectors  # (*P, n)
        shifts = np.stack([j.shift for j in spec.joints])
        return base[..., None, :] + shifts.reshape((1,) * n + shifts.shape)


def apply_loads(structure: TorusMetastructure, load: LoadField) -> np.ndarray:
    """Per-joint generalized forces (V/N) f(x(l, alpha)), shape (*P, N, d)."""
    spec = structure.spec
    if load.sampler is not None and not load.modes:
        raise ValidationError(
            [Violation("BadLoad", "torus loads must be given as Fourier modes")]
        )
    X = structure.joint_positions()
    d = spec.layout.per_joint
    out = np.zeros(X.shape[:-1] + (d,))
    w = spec.basis.volume / spec.n_joint_classes
    for k, amp in load.modes:
        phase = np.exp(1j * (X @ k))
        out += w * np.real(phase[..., None] * amp)
    _check_balanced(spec, out)
    return out


def _check_balanced(spec, forces: np.ndarray) -> None:
    f_hat = dft_forward(spec, forces)
    zero = f_hat[(0,) * spec.dimension]
    scale = max(float(np.abs(f_hat).max()), 1e-300)
    if np.abs(zero).max() > 1e-10 * scale:
        raise UnbalancedLoad("load has a nonzero k = 0 force/moment component")


@dataclass(frozen=True, eq=False)
class TorusSolution:
    displacements: np.ndarray  # (*P, N, d) real
    energy: float  # minimum potential  -1/2 <f, u>
    loaded_modes: int
    cross_residual: float | None = None


def solve_equilibrium_torus(structure: TorusMetastructure, load,
                            cross_check: str = "auto") -> TorusSolution:
    """Exact per-mode equilibrium solve on the torus dual grid.

    ``load`` is a :class:`LoadField` or a ready per-joint force array.
    With ``cross_check='auto'`` small instances (<= 6 cells per
    dimension) are verified against a sparse real-space solve.
    """
    spec = structure.spec
    n = spec.dimension
    forces = load if isinstance(load, np.ndarray) else apply_loads(structure, load)
    _check_balanced(spec, forces)
    f_hat = dft_forward(spec, forces)
    karr = torus_wavevectors(spec, structure.periods)
    flatk = karr.reshape(-1, n)
    fh = f_hat.reshape(len(flatk), -1)
    u_hat = np.zeros_like(fh)
    V = spec.basis.volume
    thresh = 1e-13 * max(float(np.abs(fh).max()), 1e-300)
    loaded = 0
    for i, kk in enumerate(flatk):
        if not np.any(np.abs(fh[i]) > thresh):
            continue
        if not kk.any():
            continue  # balanced: the k=0 residue is roundoff
        D = assemble_dynamical_matrix(spec, kk)
        evals = np.linalg.eigvalsh(D)
        if evals[0] <= 1e-12 * max(evals[-1], 1e-300):
            raise SingularMode(f"dynamical matrix singular at loaded wavevector {kk}")
        u_hat[i] = np.linalg.solve(D, fh[i] / V)
        loaded += 1
    u = dft_inverse(spec, u_hat.reshape(f_hat.shape))
    assert np.abs(u.imag).max() <= 1e-10 * max(np.abs(u.real).max(), 1e-300)
    u = u.real
    energy = -0.5 * float(np.sum(forces * u))

    cross = None
    if cross_check == "always" or (cross_check == "auto" and max(structure.periods) <= 6):
        u_rs, e_rs = _solve_torus_realspace(structure, forces)
        scale = max(np.abs(u).max(), 1e-300)
        cross = max(
            float(np.abs(u - u_rs).max()) / scale,
            abs(e_rs - energy) / max(abs(energy), 1e-300),
        )
        if cross > 1e-9:
            raise SingularSystem(
                f"Fourier and real-space torus solves disagree ({cross:.3e})"
            )
    return TorusSolution(u, energy, loaded, cross)


def _torus_dof_index(structure: TorusMetastructure, cell, alpha: int) -> int:
    p = structure.periods
    wrapped = tuple(int(c) % p[i] for i, c in enumerate(cell))
    flat_cell = int(np.ravel_multi_index(wrapped, p))
    return (flat_cell * structure.spec.n_joint_classes + alpha) * structure.spec.layout.per_joint


def _torus_stiffness(structure: TorusMetastructure) -> scipy.sparse.csr_matrix:
    spec = structure.spec
    d = spec.layout.per_joint
    ndof = structure.joint_count * d
    rows, cols, vals = [], [], []
    for beta, bar in enumerate(spec.bars):
        S = bar_stiffness_global(spec, beta)
        for cell in itertools.product(*[range(p) for p in structure.periods]):
            m = np.asarray(cell)
            im = _torus_dof_index(structure, m + bar.begin_offset, bar.begin_joint)
            ip = _torus_dof_index(structure, m + bar.end_offset, bar.end_joint)
            idx = np.concatenate([np.arange(im, im + d), np.arange(ip, ip + d)])
            for a in range(2 * d):
                rows.extend([idx[a]] * (2 * d))
                cols.extend(idx)
                vals.extend(S[a])
    K = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(ndof, ndof))
    return K.tocsr()


def _solve_torus_realspace(structure: TorusMetastructure, forces: np.ndarray):
    """Sparse KKT solve with the torus null space (translations) pinned."""
    spec = structure.spec
    K = _torus_stiffness(structure)
    f = forces.reshape(-1)
    nv = spec.layout.n_defl
    d = spec.layout.per_joint
    nj = structure.joint_count
    R = np.zeros((nj * d, nv))
    for c in range(nv):
        R[c::d, c] = 1.0
    u = _kkt_solve(K, R, f)
    return u.reshape(forces.shape), -0.5 * float(f @ u)


def _kkt_solve(K, R: np.ndarray, f: np.ndarray) -> np.ndarray:
    if R.size and np.abs(R.T @ f).max() > 1e-9 * max(np.abs(f).max(), 1e-300):
        raise UnbalancedLoad("load has a component along the rigid modes")
    m = R.shape[1]
    sys = scipy.sparse.bmat(
        [[K, scipy.sparse.csr_matrix(R)], [scipy.sparse.csr_matrix(R.T), None]],
        format="csc",
    )
    rhs = np.concatenate([f, np.zeros(m)])
    try:
        lu = scipy.sparse.linalg.splu(sys)
        sol = lu.solve(rhs)
    except RuntimeError as exc:
        raise SingularSystem(f"factorization failed: {exc}") from exc
    u = sol[: K.shape[0]]
    resid = np.abs(K @ u + R @ sol[K.shape[0]:] - f).max()
    if not np.isfinite(resid) or resid > 1e-8 * max(np.abs(f).max(), 1e-300):
        raise SingularSystem("real-space equilibrium residual too large (mechanism?)")
    return u


# ---------------------------------------------------------------------------
# Bounded metastructures


class Box:
    """Axis-aligned closed box, any dimension."""

    def __init__(self, lo, hi):
        self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if np.any(self.hi <= self.lo):
            raise ValidationError([Violation("BadDomain", "box needs hi > lo")])

    def contains(self, X: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.all((X >= self.lo - tol) & (X <= self.hi + tol), axis=1)

    def scaled(self, s: float) -> "Box":
        return Box(self.lo * s, self.hi * s)

    def bounding_box(self):
        return self.lo, self.hi


class ConvexPolytope:
    """Convex hull of a point set (2D/3D); containment via half-spaces."""

    def __init__(self, points):
        from scipy.spatial import ConvexHull

        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        hull = ConvexHull(self.points)
        eq = hull.equations  # rows (normal, offset): normal . x + offset <= 0
        self._A = eq[:, :-1]
        self._b = -eq[:, -1]

    def contains(self, X: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.all(X @ self._A.T <= self._b + tol, axis=1)

    def scaled(self, s: float) -> "ConvexPolytope":
        return ConvexPolytope(self.points * s)

    def bounding_box(self):
        return self.points.min(axis=0), self.points.max(axis=0)


@dataclass(frozen=True, eq=False)
class BoundedMetastructure:
    """Bars of the infinite lattice maximally contained in a domain.

    ``bars`` holds (cell index array, bar class); ``joints`` the index
    pairs (cell, joint class) of their endpoints, in a fixed order.
    """

    spec: object
    bars: tuple
    joints: tuple
    joint_index: dict = field(repr=False)
    positions: np.ndarray


def build_bounded(spec, domain, scale: float = 1.0) -> BoundedMetastructure:
    """Enumerate all bars whose closed segment lies inside domain/scale.

    The domain must be convex (Box or ConvexPolytope), so the segment
    test reduces to its endpoints.
    """
    if scale <= 0:
        raise ValidationError([Violation("BadScale", "scale must be positive")])
    dom = domain.scaled(1.0 / scale) if scale != 1.0 else domain
    lo, hi = dom.bounding_box()
    corners = np.array(list(itertools.product(*zip(np.atleast_1d(lo), np.atleast_1d(hi)))))
    frac = spec.basis.fractional(corners)
    frac = np.atleast_2d(frac)
    margin = 1 + max(
        int(np.abs(np.concatenate([b.begin_offset, b.end_offset])).max()) for b in spec.bars
    )
    lmin = np.floor(frac.min(axis=0)).astype(int) - margin
    lmax = np.ceil(frac.max(axis=0)).astype(int) + margin

    bars, joints, joint_index, positions = [], [], {}, []

    def joint_id(cell, alpha):
        key = (tuple(int(c) for c in cell), int(alpha))
        if key not in joint_index:
            joint_index[key] = len(joints)
            joints.append(key)
            positions.append(joint_position(spec, np.asarray(key[0]), alpha))
        return joint_index[key]

    ranges = [range(a, b + 1) for a, b in zip(lmin, lmax)]
    for cell in itertools.product(*ranges):
        m = np.asarray(cell)
        for beta, bar in enumerate(spec.bars):
            xm = joint_position(spec, m + bar.begin_offset, bar.begin_joint)
            xp = joint_position(spec, m + bar.end_offset, bar.end_joint)
            inside = dom.contains(np.stack([xm, xp]))
            if inside.all():
                bars.append((m, beta))
                joint_id(m + bar.begin_offset, bar.begin_joint)
                joint_id(m + bar.end_offset, bar.end_joint)
    if not bars:
        raise EmptyStructure("no bar fits inside the domain")
    return BoundedMetastructure(
        spec, tuple(bars), tuple(joints), joint_index, np.asarray(positions)
    )


@dataclass(frozen=True, eq=False)
class BoundedSolution:
    displacements: np.ndarray  # (n_joints, d)
    energy: float


def _bounded_stiffness(structure: BoundedMetastructure) -> scipy.sparse.csr_matrix:
    spec = structure.spec
    d = spec.layout.per_joint
    ndof = len(structure.joints) * d
    rows, cols, vals = [], [], []
    for m, beta in structure.bars:
        bar = spec.bars[beta]
        S = bar_stiffness_global(spec, beta)
        im = structure.joint_index[
            (tuple(int(c) for c in m + bar.begin_offset), bar.begin_joint)] * d
        ip = structure.joint_index[
            (tuple(int(c) for c in m + bar.end_offset), bar.end_joint)] * d
        idx = np.concatenate([np.arange(im, im + d), np.arange(ip, ip + d)])
        for a in range(2 * d):
            rows.extend([idx[a]] * (2 * d))
            cols.extend(idx)
            vals.extend(S[a])
    return scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(ndof, ndof)).tocsr()


def bounded_joint_forces(structure: BoundedMetastructure, load) -> np.ndarray:
    spec = structure.spec
    if isinstance(load, np.ndarray):
        return load
    w = spec.basis.volume / spec.n_joint_classes
    return np.stack([w * load(x) for x in structure.positions])


def solve_equilibrium_bounded(structure: BoundedMetastructure, load,
                              policy="project") -> BoundedSolution:
    """Sparse equilibrium solve on a bounded structure.

    ``policy`` is either ``"project"`` (orthogonality to all rigid
    motions enforced via a KKT system; requires a balanced load) or
    ``("pin", joint_number)`` (that joint's DOFs are fixed to zero).
    """
    spec = structure.spec
    forces = bounded_joint_forces(structure, load)
    d = spec.layout.per_joint
    K = _bounded_stiffness(structure)
    f = forces.reshape(-1)

    if policy == "project":
        R = rigid_motion_basis(spec.layout, structure.positions)
        # orthonormalize for a well-scaled KKT block
        R, _ = np.linalg.qr(R)
        u = _kkt_solve(K, R, f)
    else:
        kind, joint = policy
        if kind != "pin":
            raise ValidationError([Violation("BadPolicy", f"unknown policy {policy!r}")])
        keep = np.ones(K.shape[0], dtype=bool)
        keep[joint * d:(joint + 1) * d] = False
        Kr = K[keep][:, keep].tocsc()
        u = np.zeros(K.shape[0])
        try:
            u[keep] = scipy.sparse.linalg.splu(Kr).solve(f[keep])
        except RuntimeError as exc:
            raise SingularSystem(f"factorization failed: {exc}") from exc
        resid = np.abs(Kr @ u[keep] - f[keep]).max()
        if not np.isfinite(resid) or resid > 1e-8 * max(np.abs(f).max(), 1e-300):
            raise SingularSystem("pinned system is singular (mechanism?)")
    return BoundedSolution(u.reshape(forces.shape), -0.5 * float(f @ u))


# ---------------------------------------------------------------------------
# Continuum comparison and the convergence study


def continuum_min_energy(model, load: LoadField, config: LimitConfig | None = None) -> float:
    """Continuum minimum potential of a balanced Fourier-mode load.

    ``model`` is a metamaterial spec (the homogenized matrix is then
    computed per mode) or extracted
    :class:`~lattice_homog.continuum.EffectiveModuli` (which carry the
    cell volume and reconstruct the matrix from the energy density).
    """
    if not load.modes:
        return 0.0
    from .continuum import EffectiveModuli

    if isinstance(model, EffectiveModuli):
        volume = model.cell_volume

        def D0(k):
            return model.dynamical_matrix(k)
    else:
        volume = model.basis.volume

        def D0(k):
            return continuum_dynamical_matrix(model, k, config).matrix

    total = 0.0
    for k, amp in load.modes:
        total += -0.5 * volume * float(np.real(amp.conj() @ np.linalg.solve(D0(k), amp)))
    return total


@dataclass(frozen=True)
class ConvergenceRow:
    eps: float
    periods: int
    discrete_energy: float
    continuum_energy: float
    gap: float
    slope: float | None


@dataclass(frozen=True, eq=False)
class ConvergenceTable:
    rows: tuple

    def to_csv(self) -> str:
        lines = ["epsilon,periods,discrete_energy,continuum_energy,gap,slope"]
        for r in self.rows:
            slope = "" if r.slope is None else fmt_float(r.slope)
            lines.append(",".join([
                fmt_float(r.eps), str(r.periods), fmt_float(r.discrete_energy),
                fmt_float(r.continuum_energy), fmt_float(r.gap), slope,
            ]))
        return "\n".join(lines) + "\n"


def convergence_study(spec, load: LoadField, eps_list,
                      config: LimitConfig | None = None) -> ConvergenceTable:
    """Scaled discrete minima against the continuum minimum.

    ``load`` holds fixed macroscopic modes (integer combinations of the
    reciprocal basis); each eps must be 1/P for an integer P large
    enough to carry every mode.
    """
    n = spec.dimension
    m0 = continuum_min_energy(spec, load, config)
    rows = []
    prev = None
    for eps in eps_list:
        P = round(1.0 / float(eps))
        if abs(P * float(eps) - 1.0) > 1e-9:
            raise ValidationError(
                [Violation("BadEpsilon", f"eps={eps} is not the reciprocal of an integer")]
            )
        structure = TorusMetastructure(spec, P)
        micro = scaled_load(load, float(eps), spec.layout.n_defl)
        sol = solve_equilibrium_torus(structure, micro, cross_check="never")
        m_eps = float(eps) ** n * sol.energy
        gap = abs(m_eps - m0)
        slope = None
        if prev is not None and gap > 0 and prev[1] > 0:
            slope = float(np.log(prev[1] / gap) / np.log(float(eps) / prev[0]) * -1.0)
        rows.append(ConvergenceRow(float(eps), P, m_eps, m0, gap, slope))
        prev = (float(eps), gap)
    return ConvergenceTable(tuple(rows))


# ---------------------------------------------------------------------------
# Diagnostics


def torus_energy_breakdown(structure: TorusMetastructure, u: np.ndarray):
    """Real-space (axial, bending, coupling) energy split of a field."""
    spec = structure.spec
    d = spec.layout.per_joint
    flat = u.reshape(-1)
    parts = {"axial": 0.0, "bending": 0.0, "coupling": 0.0}
    for beta, bar in enumerate(spec.bars):
        terms = beam_energy_terms(bar.section, bar.length, bar.directors, spec.layout)
        for cell in itertools.product(*[range(p) for p in structure.periods]):
            m = np.asarray(cell)
            im = _torus_dof_index(structure, m + bar.begin_offset, bar.begin_joint)
            ip = _torus_dof_index(structure, m + bar.end_offset, bar.end_joint)
            U = np.concatenate([flat[im:im + d], flat[ip:ip + d]])
            for t in terms:
                val = t.row(spec.layout) @ U
                parts[t.kind] += 0.5 * t.coefficient * val * val
    return parts["axial"], parts["bending"], parts["coupling"]


def write_displacement_csv(structure: TorusMetastructure, u: np.ndarray, path) -> None:
    """Dump (cell indices, joint class, position, deflections, rotations)."""
    spec = structure.spec
    n = spec.dimension
    nv = spec.layout.n_defl
    X = structure.joint_positions()
    header = (
        [f"l{i+1}" for i in range(n)] + ["alpha"]
        + [f"x{i+1}" for i in range(n)]
        + [f"v{i+1}" for i in range(nv)]
        + [f"theta{i+1}" for i in range(spec.layout.n_rot)]
    )
    lines = [",".join(header)]
    for cell in itertools.product(*[range(p) for p in structure.periods]):
        for alpha in range(spec.n_joint_classes):
            pos = X[cell + (alpha,)]
            dof = u[cell + (alpha,)]
            fields = [str(c) for c in cell] + [str(alpha)]
            fields += [fmt_float(v) for v in pos]
            fields += [fmt_float(v) for v in dof]
            lines.append(",".join(fields))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
