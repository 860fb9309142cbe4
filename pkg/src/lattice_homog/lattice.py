"""Periodic lattice geometry: Bravais basis, joint classes, bar classes.

A metamaterial is a periodic frame.  Joints of class ``alpha`` sit at
``x(l, alpha) = b_alpha + sum_i l[i] a_i`` for integer cell indices
``l``; an oriented bar class connects two joint classes at fixed cell
offsets, so connectivity is translation invariant by construction.
Joint and bar class indices are 0-based throughout.

Shift vectors are canonicalized into the unit cell at construction
(bar offsets are compensated, leaving the geometry unchanged).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .beams import BeamSection, DofLayout
from .errors import SingularBasis, ValidationError, Violation

GEOM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class BravaisBasis:
    """Basis vectors as rows of ``vectors``; derived dual quantities."""

    vectors: np.ndarray

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        if v.shape[0] != v.shape[1] or v.shape[0] not in (1, 2, 3):
            raise ValidationError(
                [Violation("BadBasisShape", f"basis must be n x n with n in 1..3, got {v.shape}")]
            )
        scale = np.abs(v).max()
        if scale == 0 or abs(np.linalg.det(v)) < 1e-12 * scale ** v.shape[0]:
            raise SingularBasis()
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def dimension(self) -> int:
        return self.vectors.shape[0]

    @property
    def volume(self) -> float:
        return float(abs(np.linalg.det(self.vectors)))

    @property
    def reciprocal(self) -> np.ndarray:
        """Rows g_j with a_i . g_j = 2 pi delta_ij."""
        return 2.0 * np.pi * np.linalg.inv(self.vectors).T

    def bz_inradius(self) -> float:
        """Radius of the largest ball around k=0 inside the first zone."""
        g = self.reciprocal
        n = self.dimension
        best = np.inf
        for c in np.ndindex(*(7,) * n):
            cc = np.array(c) - 3
            if not cc.any():
                continue
            best = min(best, float(np.linalg.norm(cc @ g)))
        return 0.5 * best

    def fractional(self, x: np.ndarray) -> np.ndarray:
        """Coordinates of point(s) x in the basis."""
        return np.linalg.solve(self.vectors.T, np.atleast_1d(np.asarray(x, float)).T).T


@dataclass(frozen=True, eq=False)
class JointClass:
    shift: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.shift, dtype=float).copy()
        s.setflags(write=False)
        object.__setattr__(self, "shift", s)


@dataclass(frozen=True, eq=False)
class BarClass:
    """Oriented bar class: joint classes and cell offsets of both ends.

    ``dx``, ``length`` and ``directors`` are derived from the hosting
    spec's geometry at construction time.
    """

    begin_joint: int
    begin_offset: np.ndarray
    end_joint: int
    end_offset: np.ndarray
    section: BeamSection
    dx: np.ndarray
    length: float
    directors: tuple

    def __post_init__(self):
        for name in ("begin_offset", "end_offset", "dx"):
            a = np.asarray(getattr(self, name))
            a = a.astype(int if "offset" in name else float).copy()
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(
            self, "directors", tuple(np.asarray(d, dtype=float) for d in self.directors)
        )


@dataclass(frozen=True, eq=False)
class MetamaterialSpec:
    basis: BravaisBasis
    joints: tuple
    bars: tuple
    layout: DofLayout
    validated: bool = field(default=False, compare=False)

    @property
    def dimension(self) -> int:
        return self.basis.dimension

    @property
    def n_joint_classes(self) -> int:
        return len(self.joints)

    @property
    def n_bar_classes(self) -> int:
        return len(self.bars)

    @property
    def dofs_per_joint(self) -> int:
        return self.layout.per_joint


def _perp(d: np.ndarray) -> np.ndarray:
    return np.array([-d[1], d[0]])


def _directors_for(dx: np.ndarray, dim: int, d2_override=None):
    L = float(np.linalg.norm(dx))
    if L == 0:
        raise ValidationError([Violation("ZeroLengthBar", "bar has zero length")])
    d1 = dx / L
    if dim == 1:
        return (d1,)
    if dim == 2:
        return (d1, _perp(d1))
    if d2_override is not None:
        d2 = np.asarray(d2_override, dtype=float)
        d2 = d2 / np.linalg.norm(d2)
    else:
        axis = np.array([0.0, 0.0, 1.0])
        c = np.cross(d1, axis)
        if np.linalg.norm(c) < 1e-8:
            # bar parallel to the default axis: fall back to e1
            c = np.cross(d1, np.array([1.0, 0.0, 0.0]))
        d2 = c / np.linalg.norm(c)
    return (d1, d2, np.cross(d1, d2))


def make_spec(basis, shifts, bars, layout=None) -> MetamaterialSpec:
    """Build a spec from raw geometry.

    ``bars`` entries are dicts with keys ``begin`` and ``end`` (each a
    ``(joint_index, offset)`` pair), ``section`` (:class:`BeamSection`
    or dict) and optional ``d2`` (3D director override).  Shifts are
    reduced into the unit cell; bar offsets absorb the reduction.
    """
    basis = basis if isinstance(basis, BravaisBasis) else BravaisBasis(np.asarray(basis, float))
    n = basis.dimension
    if layout is None:
        layout = DofLayout.frame(n) if n > 1 else DofLayout.axial_1d()

    shifts = [np.atleast_1d(np.asarray(s, dtype=float)) for s in shifts]
    reductions = []
    joints = []
    for s in shifts:
        if s.shape != (n,):
            raise ValidationError(
                [Violation("BadShift", f"shift {s} has wrong dimension (expected {n})")]
            )
        frac = basis.fractional(s)
        t = np.floor(frac + 1e-12).astype(int)
        reductions.append(t)
        joints.append(JointClass(s - t @ basis.vectors))

    bar_classes = []
    for i, entry in enumerate(bars):
        jm, om = entry["begin"]
        jp, op = entry["end"]
        for j in (jm, jp):
            if not (0 <= j < len(joints)):
                raise ValidationError(
                    [Violation("BadJointIndex", f"bar {i} references joint class {j}")]
                )
        om = np.atleast_1d(np.asarray(om, dtype=int)) + reductions[jm]
        op = np.atleast_1d(np.asarray(op, dtype=int)) + reductions[jp]
        section = entry["section"]
        if isinstance(section, dict):
            section = _section_from_dict(section)
        dx = (joints[jp].shift + op @ basis.vectors) - (joints[jm].shift + om @ basis.vectors)
        directors = _directors_for(dx, n, entry.get("d2"))
        bar_classes.append(
            BarClass(jm, om, jp, op, section, dx, float(np.linalg.norm(dx)), directors)
        )

    return MetamaterialSpec(basis, tuple(joints), tuple(bar_classes), layout)


def validation_report(spec: MetamaterialSpec):
    """All invariant findings for ``spec`` (errors and warnings)."""
    found = []
    n = spec.dimension
    if spec.layout.dim != n:
        found.append(Violation("BadLayout", "layout dimension does not match basis"))

    recip = spec.basis.reciprocal
    if not np.allclose(spec.basis.vectors @ recip.T, 2 * np.pi * np.eye(n), atol=1e-10):
        found.append(Violation("BadReciprocal", "reciprocal basis identity fails"))

    referenced = set()
    for i, bar in enumerate(spec.bars):
        referenced.add(bar.begin_joint)
        referenced.add(bar.end_joint)
        dx = (
            spec.joints[bar.end_joint].shift + bar.end_offset @ spec.basis.vectors
            - spec.joints[bar.begin_joint].shift - bar.begin_offset @ spec.basis.vectors
        )
        scale = max(1.0, float(np.linalg.norm(dx)))
        if np.linalg.norm(dx - bar.dx) > 1e-12 * scale:
            found.append(Violation(
                "InconsistentSpan",
                f"bar {i}: stored span {bar.dx} differs from geometry {dx}"))
            continue
        if bar.length <= GEOM_TOL * max(1.0, np.abs(spec.basis.vectors).max()):
            found.append(Violation("ZeroLengthBar", f"bar {i} has zero length"))
            continue
        D = np.vstack(bar.directors)
        gram = D @ D.T
        if np.abs(gram - np.eye(len(bar.directors))).max() > 1e-12:
            found.append(Violation(
                "NonOrthonormalDirectors", f"bar {i}: director Gram matrix is not identity"))
        if np.linalg.norm(bar.directors[0] - bar.dx / bar.length) > 1e-12:
            found.append(Violation(
                "NonOrthonormalDirectors", f"bar {i}: first director is not the bar axis"))
        if n == 3 and np.linalg.det(D) < 0:
            found.append(Violation(
                "NonOrthonormalDirectors", f"bar {i}: director triad is left-handed"))
        if n == 2 and np.linalg.det(D) < 0:
            found.append(Violation(
                "NonOrthonormalDirectors", f"bar {i}: director pair is left-handed"))

    for alpha in range(spec.n_joint_classes):
        if alpha not in referenced:
            found.append(Violation(
                "DanglingJointClass", f"joint class {alpha} is used by no bar", warning=True))
        frac = spec.basis.fractional(spec.joints[alpha].shift)
        if np.any(frac < -1e-9) or np.any(frac >= 1 + 1e-9):
            found.append(Violation(
                "UnreducedShift", f"joint class {alpha} shift lies outside the unit cell",
                warning=True))
    return found


def validate(spec: MetamaterialSpec) -> MetamaterialSpec:
    """Check all invariants; return the spec marked validated.

    Raises :class:`ValidationError` carrying every violation found.
    Warnings (e.g. dangling joint classes) do not fail validation.
    """
    found = validation_report(spec)
    errors = [v for v in found if not v.warning]
    if errors:
        raise ValidationError(errors)
    return MetamaterialSpec(spec.basis, spec.joints, spec.bars, spec.layout, validated=True)


def joint_position(spec: MetamaterialSpec, l, alpha: int) -> np.ndarray:
    """Position of joint (l, alpha)."""
    if not (0 <= alpha < spec.n_joint_classes):
        raise ValidationError([Violation("BadJointIndex", f"joint class {alpha} out of range")])
    l = np.atleast_1d(np.asarray(l, dtype=float))
    return spec.joints[alpha].shift + l @ spec.basis.vectors


def bar_endpoints(spec: MetamaterialSpec, m, beta: int):
    """Endpoints (x_minus, x_plus) of bar (m, beta); x_plus - x_minus = dx."""
    if not (0 <= beta < spec.n_bar_classes):
        raise ValidationError([Violation("BadBarIndex", f"bar class {beta} out of range")])
    bar = spec.bars[beta]
    m = np.atleast_1d(np.asarray(m, dtype=int))
    xm = joint_position(spec, m + bar.begin_offset, bar.begin_joint)
    xp = joint_position(spec, m + bar.end_offset, bar.end_joint)
    return xm, xp


def cell_volume(basis) -> float:
    basis = basis if isinstance(basis, BravaisBasis) else BravaisBasis(basis)
    return basis.volume


@dataclass(frozen=True, eq=False)
class BrillouinZoneGrid:
    """Regular grid over the fundamental dual cell in fractional coords.

    ``points`` holds wavevectors (rows), ``fractional`` their dual
    coordinates in [-1/2, 1/2), and ``is_gamma`` flags the exact k=0
    sample.
    """

    points: np.ndarray
    fractional: np.ndarray
    is_gamma: np.ndarray


def brillouin_zone_sampler(basis, resolution: int) -> BrillouinZoneGrid:
    """Sample the dual cell on a resolution^n grid that contains k=0."""
    basis = basis if isinstance(basis, BravaisBasis) else BravaisBasis(basis)
    if resolution < 1:
        raise ValidationError([Violation("BadResolution", "resolution must be >= 1")])
    n = basis.dimension
    axis = np.arange(resolution) / resolution
    axis = ((axis + 0.5) % 1.0) - 0.5
    axis.sort()
    frac = np.stack(np.meshgrid(*([axis] * n), indexing="ij"), axis=-1).reshape(-1, n)
    points = frac @ basis.reciprocal
    return BrillouinZoneGrid(points, frac, np.all(frac == 0.0, axis=1))


# ---------------------------------------------------------------------------
# JSON lattice definitions

_SECTION_KEYS = ("EA", "GI1", "EI2", "EI3")


def _section_from_dict(d: dict) -> BeamSection:
    unknown = set(d) - set(_SECTION_KEYS) - {"EI"}
    if unknown:
        raise ValidationError(
            [Violation("BadSection", f"unknown section keys {sorted(unknown)}")]
        )
    if "EI" in d:
        if "EI3" in d:
            raise ValidationError(
                [Violation("BadSection", "give either EI or EI3, not both")]
            )
        d = {**{k: v for k, v in d.items() if k != "EI"}, "EI3": d["EI"]}
    return BeamSection(**{k: float(d.get(k, 0.0)) for k in _SECTION_KEYS})


def spec_from_dict(data: dict) -> MetamaterialSpec:
    """Build a spec from the JSON lattice-definition schema.

    Schema: ``dimension`` (int), ``basis`` (n x n, row-major),
    ``joints`` (list of shift vectors), ``bars`` (list of
    ``{begin: {joint, offset}, end: {joint, offset}, section: {...},
    d2: optional}``), optional ``dof_mode`` ("axial" | "bending",
    1D only).  Lengths and directors are derived, never supplied.
    """
    try:
        n = int(data["dimension"])
        basis = np.asarray(data["basis"], dtype=float)
        shifts = [np.asarray(s, dtype=float) for s in data["joints"]]
        raw_bars = data["bars"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(
            [Violation("BadSchema", f"missing or malformed field: {exc}")]
        ) from exc
    if basis.shape != (n, n):
        raise ValidationError(
            [Violation("BadSchema", f"basis shape {basis.shape} != ({n}, {n})")]
        )
    mode = data.get("dof_mode")
    if mode is not None and n != 1:
        raise ValidationError([Violation("BadSchema", "dof_mode is only valid for 1D lattices")])
    if n == 1:
        layout = DofLayout.bending_1d() if mode == "bending" else DofLayout.axial_1d()
    else:
        layout = DofLayout.frame(n)

    bars = []
    for i, rb in enumerate(raw_bars):
        try:
            entry = {
                "begin": (int(rb["begin"]["joint"]), rb["begin"]["offset"]),
                "end": (int(rb["end"]["joint"]), rb["end"]["offset"]),
                "section": dict(rb["section"]),
            }
        except (KeyError, TypeError) as exc:
            raise ValidationError(
                [Violation("BadSchema", f"bar {i}: missing field {exc}")]
            ) from exc
        if "d2" in rb:
            if n != 3:
                raise ValidationError(
                    [Violation("BadSchema", f"bar {i}: d2 override is 3D-only")]
                )
            entry["d2"] = np.asarray(rb["d2"], dtype=float)
        bars.append(entry)
    return make_spec(basis, shifts, bars, layout)


def load_spec_json(path) -> MetamaterialSpec:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError([Violation("BadJSON", str(exc))]) from exc
    return spec_from_dict(data)


def spec_to_dict(spec: MetamaterialSpec) -> dict:
    data = {
        "dimension": spec.dimension,
        "basis": spec.basis.vectors.tolist(),
        "joints": [j.shift.tolist() for j in spec.joints],
        "bars": [
            {
                "begin": {"joint": b.begin_joint, "offset": b.begin_offset.tolist()},
                "end": {"joint": b.end_joint, "offset": b.end_offset.tolist()},
                "section": {
                    k: getattr(b.section, k)
                    for k in _SECTION_KEYS
                    if getattr(b.section, k) != 0.0
                },
            }
            for b in spec.bars
        ],
    }
    if spec.dimension == 1 and spec.layout.n_rot:
        data["dof_mode"] = "bending"
    return data
