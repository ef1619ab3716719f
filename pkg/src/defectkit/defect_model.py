"""Vacancy-centered defect-molecule model and symmetry classification.

The minimal basis is the four dangling sp3 orbitals c1..c4 around the
vacancy, combined into symmetrized molecular orbitals

    a1 = c1 + c2,   a1' = c3 + c4,   b1 = c1 - c2,   b2 = c3 - c4.

Coordinates follow the spin physics: z is the major spin axis (a <110>
direction), the xz plane is the defect's reflection plane containing c1 and
c2, and c3, c4 sit out of plane, mirror images through xz. In this frame the
twofold axis of a C2v defect runs along x, so the irreducible representations
are classified by the characters under {C2(x), sigma(xz), sigma(xy)}:
A1(+,+,+), A2(+,-,-), B1(-,+,-), B2(-,-,+). The dipole components then
transform as x ~ A1, z ~ B1, y ~ B2, which reproduces the one-line selection
rules used throughout. Lowering to C1h keeps only sigma(xz): even orbitals
and operators become A', odd become A''.

One labeling wrinkle: a1' = c3 + c4 is conventionally listed under A2, but
its characters are (+,+,+), i.e. a second A1 (which is also what the
HOMO/LUMO classification demands). mo_basis reports the conventional label
and carries the character-derived irrep separately; all classification uses
the latter.
"""
import warnings
from dataclasses import dataclass, field

import numpy as np

from .constants import SPIN_SPIN_PREFACTOR_MHZ_NM3
from .errors import InvalidParameterError, SingularGeometryError

_C2V_IRREPS = ("A1", "A2", "B1", "B2")
_C1H_IRREPS = ("A'", "A''")
# character rows (C2(x), sigma(xz), sigma(xy))
_C2V_CHARS = {
    "A1": (1, 1, 1),
    "A2": (1, -1, -1),
    "B1": (-1, 1, -1),
    "B2": (-1, -1, 1),
}
_DESCENT_TO_C1H = {"A1": "A'", "B1": "A'", "A2": "A''", "B2": "A''"}
# dipole operator components by irrep in the defect frame (C2 along x)
_COMPONENT_IRREP = {"x": "A1", "y": "B2", "z": "B1"}


@dataclass(frozen=True)
class PointGroup:
    """Point group of the defect: C2v or its mirror-only subgroup C1h."""

    name: str
    irreps: tuple

    def __post_init__(self):
        expected = {"C2v": _C2V_IRREPS, "C1h": _C1H_IRREPS}.get(self.name)
        if expected is None:
            raise InvalidParameterError("point group must be C2v or C1h")
        if tuple(self.irreps) != expected:
            raise InvalidParameterError(f"irrep set does not match {self.name}")


C2V = PointGroup("C2v", _C2V_IRREPS)
C1H = PointGroup("C1h", _C1H_IRREPS)


def point_group(name) -> PointGroup:
    if name == "C2v":
        return C2V
    if name == "C1h":
        return C1H
    raise InvalidParameterError("point group must be C2v or C1h")


def _product_irrep(g1, g2):
    c = tuple(a * b for a, b in zip(_C2V_CHARS[g1], _C2V_CHARS[g2]))
    for name, chars in _C2V_CHARS.items():
        if chars == c:
            return name
    raise InvalidParameterError("character product is not an irrep")


@dataclass(frozen=True)
class MolecularOrbital:
    """A symmetrized MO over the four dangling orbitals.

    coefficients are the unnormalized +-1 combinations; listed_irrep is the
    label by the listing convention, irrep the character-derived
    one actually used for products and selection rules (they differ only
    for a1').
    """

    label: str
    coefficients: tuple
    listed_irrep: str
    irrep: str


# permutation action on (c1, c2, c3, c4) index arrays
_OPS = {
    "C2x": (1, 0, 3, 2),
    "sxz": (0, 1, 3, 2),
    "sxy": (1, 0, 2, 3),
}


def _character_irrep(coeffs):
    coeffs = np.asarray(coeffs)
    chars = []
    for op in ("C2x", "sxz", "sxy"):
        permuted = coeffs[list(_OPS[op])]
        if np.array_equal(permuted, coeffs):
            chars.append(1)
        elif np.array_equal(permuted, -coeffs):
            chars.append(-1)
        else:
            raise InvalidParameterError("orbital is not symmetry adapted")
    for name, c in _C2V_CHARS.items():
        if c == tuple(chars):
            return name
    raise InvalidParameterError("characters match no C2v irrep")


_MO_TABLE = [
    ("a1", (1, 1, 0, 0), "A1"),
    ("a1'", (0, 0, 1, 1), "A2"),  # listed label; characters give A1
    ("b1", (1, -1, 0, 0), "B1"),
    ("b2", (0, 0, 1, -1), "B2"),
]


def mo_basis(group: PointGroup):
    """The four symmetrized MOs with their irrep labels for the group.

    For C1h both the listed and character labels are descended through
    A1,B1 -> A' and A2,B2 -> A''.
    """
    out = {}
    for label, coeffs, listed in _MO_TABLE:
        derived = _character_irrep(coeffs)
        if group.name == "C1h":
            listed = _DESCENT_TO_C1H[listed]
            derived = _DESCENT_TO_C1H[derived]
        out[label] = MolecularOrbital(
            label=label, coefficients=coeffs, listed_irrep=listed, irrep=derived
        )
    return out


def dipole_selection(excited_irrep, group: PointGroup):
    """Allowed electric-dipole components for A1(ground) -> excited_irrep.

    Accepts C2v labels for a C1h group and descends them first. Returns the
    allowed components as a tuple drawn from ('x', 'y', 'z'); empty means
    the transition is dipole forbidden.
    """
    if group.name == "C2v":
        if excited_irrep not in _C2V_IRREPS:
            raise InvalidParameterError(f"{excited_irrep} is not a C2v irrep")
        return tuple(
            comp for comp, irr in _COMPONENT_IRREP.items() if irr == excited_irrep
        )
    label = _DESCENT_TO_C1H.get(excited_irrep, excited_irrep)
    if label not in _C1H_IRREPS:
        raise InvalidParameterError(f"{excited_irrep} is not a C1h irrep")
    return tuple(
        comp
        for comp, irr in _COMPONENT_IRREP.items()
        if _DESCENT_TO_C1H[irr] == label
    )


@dataclass(frozen=True)
class VacancyGeometry:
    """Mean positions and bond-axis variances of the four dangling orbitals.

    positions are the nearest-neighbor sites in units of the bond length;
    mean_positions are the orbital centroids (defaulting to the sites) and
    variances the per-orbital electron-position variance along the bond
    axis, in bond lengths squared (minor-axis variances are neglected).
    """

    positions: np.ndarray
    mean_positions: np.ndarray = None
    variances: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.shape != (4, 3):
            raise InvalidParameterError("positions must be a 4x3 array")
        mean = self.mean_positions
        mean = pos.copy() if mean is None else np.asarray(mean, dtype=float)
        var = np.asarray(self.variances, dtype=float)
        if np.isscalar(self.variances) or var.ndim == 0:
            var = np.full(4, float(var))
        if var.shape != (4,) or np.any(var < 0):
            raise InvalidParameterError("variances must be four non-negative values")
        # c1, c2 in the xz plane with equal <x> and opposite <z>
        if abs(mean[0, 1]) > 1e-9 or abs(mean[1, 1]) > 1e-9:
            raise InvalidParameterError("c1 and c2 must lie in the xz plane")
        if abs(mean[0, 0] - mean[1, 0]) > 1e-9 or abs(mean[0, 2] + mean[1, 2]) > 1e-9:
            raise InvalidParameterError("c1 and c2 must mirror through the xy plane")
        # c3, c4 mirror-symmetric through the xz plane
        if (abs(mean[2, 0] - mean[3, 0]) > 1e-9
                or abs(mean[2, 1] + mean[3, 1]) > 1e-9
                or abs(mean[2, 2] - mean[3, 2]) > 1e-9):
            raise InvalidParameterError("c3 and c4 must mirror through the xz plane")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "mean_positions", mean)
        object.__setattr__(self, "variances", var)

    @classmethod
    def with_polar_angle(cls, theta_deg, delta=0.0):
        """Sites at polar angle theta from the symmetry axes.

        c1, c2 sit in the xz plane at angle theta from +-z; c3, c4 sit in
        the xy plane at the mirrored positions. theta = 45 makes each bond's
        in-plane mean coordinates equal in magnitude, which is the
        idealization under which the (a1, b1) tensor collapses to the
        two-parameter tilt form.
        """
        s, c = np.sin(np.deg2rad(theta_deg)), np.cos(np.deg2rad(theta_deg))
        pos = np.array([
            [-s, 0.0, c],
            [-s, 0.0, -c],
            [s, c, 0.0],
            [s, -c, 0.0],
        ])
        return cls(positions=pos, variances=np.full(4, float(delta)))

    @classmethod
    def tetrahedral(cls, delta=0.0):
        """Ideal undistorted vacancy: four sp3 bonds at 109.47 degrees."""
        return cls.with_polar_angle(np.rad2deg(np.arctan(np.sqrt(0.5))), delta=delta)

    def bond_axis(self, i):
        p = self.positions[i]
        return p / np.linalg.norm(p)

    def covariance(self, i):
        m = self.bond_axis(i)
        return self.variances[i] * np.outer(m, m)


@dataclass(frozen=True)
class DipoleEstimate:
    """Geometric estimate of a transition dipole direction and magnitude.

    magnitude is in units of e times the bond length; order records whether
    the estimate came from the on-site terms ("onsite"), from the
    bond-midpoint overlap approximation ("overlap"), or vanished entirely
    ("zero"). forbidden marks symmetry-forbidden transitions.
    """

    direction: np.ndarray
    magnitude: float
    order: str
    forbidden: bool = False


def _pair_orbitals(homo_label, lumo_label, group):
    basis = mo_basis(group)
    try:
        return basis[homo_label], basis[lumo_label]
    except KeyError as err:
        raise InvalidParameterError(f"unknown MO label {err}") from None


def dipole_estimate(homo, lumo, geom: VacancyGeometry,
                    group: PointGroup = C2V) -> DipoleEstimate:
    """Estimate <homo|d|lumo> from the atomic-orbital expansion.

    On-site terms use the orbital centroids with inter-orbital overlap
    neglected; when they cancel, the overlap terms are retained with a
    point charge at the bond midpoint and unit overlap integral (so the
    magnitude is an order-of-magnitude scale only, but the direction is
    fixed by symmetry). Symmetry-forbidden pairs return the zero vector
    flagged forbidden.
    """
    a, b = _pair_orbitals(homo, lumo, group)
    excited = _product_irrep(
        _character_irrep(a.coefficients), _character_irrep(b.coefficients)
    )
    allowed = dipole_selection(excited, group)
    ca = np.asarray(a.coefficients, dtype=float)
    cb = np.asarray(b.coefficients, dtype=float)
    if not allowed:
        return DipoleEstimate(np.zeros(3), 0.0, order="zero", forbidden=True)
    d = np.zeros(3)
    for i in range(4):
        d += ca[i] * cb[i] * geom.mean_positions[i]
    order = "onsite"
    if np.linalg.norm(d) < 1e-12:
        order = "overlap"
        for i in range(4):
            for j in range(4):
                if i != j and ca[i] * cb[j] != 0.0:
                    mid = 0.5 * (geom.mean_positions[i] + geom.mean_positions[j])
                    d += ca[i] * cb[j] * mid
    mag = float(np.linalg.norm(d))
    if mag < 1e-12:
        return DipoleEstimate(np.zeros(3), 0.0, order="zero")
    return DipoleEstimate(d / mag, mag, order=order)


@dataclass(frozen=True)
class SpinSpinTensor:
    """Traceless symmetric dipolar spin-spin tensor of a HOMO/LUMO triplet.

    matrix is dimensionless (bond lengths^-3); frequency_mhz converts with
    the dipolar prefactor for a physical bond length.
    """

    matrix: np.ndarray
    homo: str = ""
    lumo: str = ""

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise InvalidParameterError("tensor must be 3x3")
        object.__setattr__(self, "matrix", m)

    def frequency_mhz(self, bond_length_nm=0.154):
        return SPIN_SPIN_PREFACTOR_MHZ_NM3 * self.matrix / bond_length_nm**3


# Determinant bookkeeping: the two-electron sum over both orderings of the
# unnormalized MO expansions carries an overall factor 2 relative to a single
# ordered pass, fixing the normalization at A = 4/<r_z>^3.
_DETERMINANT_WEIGHT = 2.0


def spinspin_tensor(homo, lumo, geom: VacancyGeometry,
                    covariance_mode="leading") -> SpinSpinTensor:
    """Semi-classical dipolar tensor for the (homo, lumo) triplet.

    Every cross pair of occupied atomic orbitals contributes

        T_ij = delta_ij/R^3 - 3 (R_i R_j - Delta_ij) / R^5

    with R the separation of the orbital centroids; on-site pairs cancel
    exactly between the direct and exchange terms of the determinant and are
    skipped. Delta_ij is the bond-axis position covariance: mode "leading"
    takes the covariance of the pair's first orbital (the bookkeeping under
    which the in-plane pair acquires its xz tilt), mode "paired" sums both
    orbitals' covariances (for the in-plane pair the xz components then
    cancel by mirror symmetry and no tilt survives). The output is
    symmetrized and made traceless.
    """
    if covariance_mode not in ("leading", "paired"):
        raise InvalidParameterError('covariance_mode must be "leading" or "paired"')
    a, b = _pair_orbitals(homo, lumo, C2V)
    ca = np.asarray(a.coefficients, dtype=float)
    cb = np.asarray(b.coefficients, dtype=float)
    out = np.zeros((3, 3))
    for i in range(4):
        for j in range(4):
            w = ca[i] ** 2 * cb[j] ** 2
            if i == j or w == 0.0:
                continue
            r = geom.mean_positions[j] - geom.mean_positions[i]
            dist = np.linalg.norm(r)
            if dist < 1e-12:
                raise SingularGeometryError(
                    f"orbitals c{i+1} and c{j+1} have coincident mean positions"
                )
            if covariance_mode == "leading":
                cov = geom.covariance(min(i, j))
            else:
                cov = geom.covariance(i) + geom.covariance(j)
            t = np.eye(3) / dist**3 - 3.0 * (np.outer(r, r) - cov) / dist**5
            out += w * t
    out *= _DETERMINANT_WEIGHT
    out = 0.5 * (out + out.T)
    out -= np.trace(out) / 3.0 * np.eye(3)
    return SpinSpinTensor(matrix=out, homo=homo, lumo=lumo)


@dataclass(frozen=True)
class PrincipalAxes:
    """Eigenframe of a zero-field tensor with the (D, E) convention

    D = (3/2) * lambda_major, E = |lambda_mid - lambda_min| / 2, where the
    major eigenvalue is the one of largest magnitude. E >= 0 always; axial
    tensors (degenerate minor eigenvalues) carry axial=True and E = 0.
    """

    d_zfs: float
    e_zfs: float
    axes: np.ndarray  # rows: minor, mid, major eigenvectors
    major_axis: np.ndarray
    axial: bool


def principal_axes(t: SpinSpinTensor) -> PrincipalAxes:
    """Diagonalize a spin-spin tensor into (D, E) and principal axes."""
    m = 0.5 * (t.matrix + t.matrix.T)
    evals, evecs = np.linalg.eigh(m)
    major = int(np.argmax(np.abs(evals)))
    rest = [k for k in range(3) if k != major]
    lam_major = evals[major]
    lam_a, lam_b = evals[rest[0]], evals[rest[1]]
    scale = max(np.max(np.abs(evals)), 1e-300)
    axial = abs(lam_a - lam_b) <= 1e-12 * scale
    e = 0.0 if axial else 0.5 * abs(lam_a - lam_b)
    order = rest + [major]
    axes = evecs[:, order].T
    return PrincipalAxes(
        d_zfs=1.5 * lam_major,
        e_zfs=float(e),
        axes=axes,
        major_axis=evecs[:, major],
        axial=bool(axial),
    )


def tilt_angle(a, b):
    """Tilt of the major spin axis away from z for the in-plane tensor form
    [[A-B, 0, B], [0, A, 0], [B, 0, -2A+B]].

    Returns (first_order, exact) in radians: the first-order value
    B/(2B - 3A) and the exact rotation about y that diagonalizes the xz
    block (same sign convention). The two agree to O((B/A)^2). When
    2B = 3A the first-order expression is undefined and NaN is returned in
    its place.
    """
    if a <= 0:
        raise InvalidParameterError("A must be positive")
    denom = 2.0 * b - 3.0 * a
    first = float("nan") if denom == 0.0 else b / denom
    if denom == 0.0:
        warnings.warn("2B - 3A = 0: first-order tilt undefined", RuntimeWarning)
    exact = -0.5 * np.arctan2(2.0 * b, 3.0 * a - 2.0 * b)
    return first, float(exact)


_AXIS_VECTORS = {"x": np.array([1.0, 0, 0]),
                 "y": np.array([0, 1.0, 0]),
                 "z": np.array([0, 0, 1.0])}


def _snap_axis(v):
    dots = {k: abs(float(v @ u)) for k, u in _AXIS_VECTORS.items()}
    return max(dots, key=dots.get)


@dataclass(frozen=True)
class MoPair:
    """Classification record for one HOMO/LUMO pair."""

    homo: str
    lumo: str
    group: PointGroup
    excited_irrep: str
    dipole_axis: str  # 'x', 'y', 'z' or 'none'
    spin_major_axis: str
    dipole_allowed: bool = True
    dipole_vector: np.ndarray = None
    spin_axis_vector: np.ndarray = None


_PAIR_ORDER = [("a1", "a1'"), ("a1", "b1"), ("a1'", "b1"),
               ("a1", "b2"), ("a1'", "b2"), ("b1", "b2")]


def classify_pairs(group: PointGroup, geom: VacancyGeometry = None):
    """Excited-state symmetry, dipole axis and spin axis for all six pairs.

    The dipole axis follows the selection rules for the pair's excited
    irrep; when the group leaves an x/z ambiguity (C1h) a nonzero geometric
    estimate breaks it. Pairs that are dipole forbidden in C2v keep the
    C1h-allowed direction with dipole_allowed=False (they become weakly
    allowed under any in-plane distortion). The spin axis is the major
    principal axis of the semi-classical spin-spin tensor snapped to the
    nearest coordinate axis.
    """
    if geom is None:
        geom = VacancyGeometry.tetrahedral()
    basis = mo_basis(C2V)
    records = []
    for homo, lumo in _PAIR_ORDER:
        excited = _product_irrep(basis[homo].irrep, basis[lumo].irrep)
        allowed = dipole_selection(excited, group)
        est = dipole_estimate(homo, lumo, geom, group=C2V)
        dipole_allowed = bool(allowed)
        if not allowed:
            # report the direction that becomes allowed on descent to C1h
            fallback = dipole_selection(excited, C1H)
            axis = fallback[0] if len(fallback) == 1 else "none"
        elif len(allowed) == 1:
            axis = allowed[0]
        else:
            axis = _snap_axis(est.direction) if est.magnitude > 1e-12 else allowed[0]
        tensor = spinspin_tensor(homo, lumo, geom)
        frame = principal_axes(tensor)
        label = excited if group.name == "C2v" else _DESCENT_TO_C1H[excited]
        records.append(
            MoPair(
                homo=homo,
                lumo=lumo,
                group=group,
                excited_irrep=label,
                dipole_axis=axis,
                spin_major_axis=_snap_axis(frame.major_axis),
                dipole_allowed=dipole_allowed,
                dipole_vector=est.direction,
                spin_axis_vector=frame.major_axis,
            )
        )
    return records


def candidate_filter(records, dipole_axes=None, spin_axes=None,
                     require_coalignment=False):
    """Subset of classified pairs consistent with experimental constraints.

    dipole_axes / spin_axes are allowed axis-label sets (None disables the
    constraint); the experimental constraint for a <110>-oriented center is
    {'z', 'y'}, the two inequivalent <110> directions of the defect frame.
    A dipole constraint also rejects pairs whose transition is forbidden in
    the record's group.
    """
    out = []
    for rec in records:
        if dipole_axes is not None:
            if not rec.dipole_allowed or rec.dipole_axis not in dipole_axes:
                continue
        if spin_axes is not None and rec.spin_major_axis not in spin_axes:
            continue
        if require_coalignment and rec.dipole_axis != rec.spin_major_axis:
            continue
        out.append(rec)
    return out


@dataclass(frozen=True)
class StructureCandidate:
    """A candidate chemical structure with its point group.

    Bracketed species stand for any element of that periodic-table column;
    labels follow the substitution notation (XCV: next-to-nearest neighbor,
    XVX/XVY: nearest-neighbor substitutions flanking the vacancy).
    """

    label: str
    symmetry: str


_STRUCTURES = {
    4: [StructureCandidate("[Si]CV", "C1h"),
        StructureCandidate("[Si]V[Si]", "C2v")],
    6: [StructureCandidate("[O]CV", "C1h"),
        StructureCandidate("[N]-", "C1h"),
        StructureCandidate("[O]V[Si]", "C1h")],
}


def structure_shortlist(electron_count):
    """Simplest vacancy-plus-substitution structures for the electron count.

    A singlet ground state needs an even electron count; the four dangling
    bonds contribute four electrons and impurities zero or two more, so
    only 4 and 6 are admissible.
    """
    if electron_count % 2 == 1:
        raise InvalidParameterError(
            "odd electron count contradicts a singlet ground state"
        )
    if electron_count not in _STRUCTURES:
        raise InvalidParameterError("electron count must be 4 or 6")
    return list(_STRUCTURES[electron_count])
