"""S=1 triplet spin Hamiltonian: construction, ODMR lines, field sweeps, fitting.

The zero-field interaction is D*[Sz^2 - S(S+1)/3] + E*(Sx^2 - Sy^2) in the
defect frame (z = major axis), plus the Zeeman term g * (muB/h) * S.B with the
field expressed in defect coordinates. Spin operators are the standard S=1
matrices in the |+1>, |0>, |-1> basis; the zero-field eigenvalues are then
{-2D/3, D/3 - E, D/3 + E}.
"""
from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np

from .constants import MU_B_MHZ_PER_G, SPIN1_ID, SPIN1_X, SPIN1_Y, SPIN1_Z
from .errors import ConvergenceError, FitDegenerateError, InvalidParameterError

_ORTHO_TOL = 1e-12


def _check_axes(axes):
    axes = np.asarray(axes, dtype=float)
    if axes.shape != (3, 3):
        raise InvalidParameterError("axes must be a 3x3 matrix with rows x, y, z")
    gram = axes @ axes.T
    if np.max(np.abs(gram - np.eye(3))) > _ORTHO_TOL:
        raise InvalidParameterError("axes rows are not an orthonormal triad")
    if np.linalg.det(axes) < 0:
        raise InvalidParameterError("axes triad is left-handed (det < 0)")
    return axes


@dataclass(frozen=True)
class ZfsParams:
    """Zero-field splitting parameters and defect-frame orientation.

    D, E in MHz; g dimensionless; axes rows are the defect x, y, z unit
    vectors expressed in crystal coordinates (z = major spin axis). E >= 0 by
    convention, the sign being absorbed into the minor-axis labeling.
    """

    D: float
    E: float
    g: float = 2.0
    axes: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        object.__setattr__(self, "axes", _check_axes(self.axes))
        if self.E < 0:
            raise InvalidParameterError("E must be >= 0 (convention)")

    @property
    def gamma_mhz_per_g(self):
        """Electron gyromagnetic ratio g * muB/h in MHz per Gauss."""
        return self.g * MU_B_MHZ_PER_G


@dataclass(frozen=True)
class FieldVec:
    """A static magnetic field vector in crystal coordinates, in Gauss."""

    B: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "B", np.asarray(self.B, dtype=float).reshape(3))

    @property
    def magnitude(self):
        return float(np.linalg.norm(self.B))


@dataclass(frozen=True)
class OdmrLineSet:
    """Three spin-transition frequencies (MHz, ascending) with level pairs."""

    frequencies: np.ndarray
    assignments: tuple

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float).reshape(3)
        if np.any(f < -1e-9) or np.any(np.diff(f) < -1e-9):
            raise InvalidParameterError("line frequencies must be >= 0 and ascending")
        object.__setattr__(self, "frequencies", f)


def build_hamiltonian(p: ZfsParams, b: FieldVec) -> np.ndarray:
    """3x3 Hermitian spin Hamiltonian in MHz for field b (crystal frame)."""
    bx, by, bz = p.axes @ b.B  # field components along the defect axes
    gam = p.gamma_mhz_per_g
    h = (
        p.D * (SPIN1_Z @ SPIN1_Z - (2.0 / 3.0) * SPIN1_ID)
        + p.E * (SPIN1_X @ SPIN1_X - SPIN1_Y @ SPIN1_Y)
        + gam * (bx * SPIN1_X + by * SPIN1_Y + bz * SPIN1_Z)
    )
    return h


def zero_field_lines(p: ZfsParams) -> OdmrLineSet:
    """Zero-field ODMR line pattern {2E, D-E, D+E} sorted ascending.

    Level pairs are indices into the ascending eigenvalue order of the
    zero-field Hamiltonian.
    """
    lines = [(2.0 * p.E, (1, 2)), (p.D - p.E, (0, 1)), (p.D + p.E, (0, 2))]
    lines.sort(key=lambda t: t[0])
    return OdmrLineSet(
        frequencies=np.array([l[0] for l in lines]),
        assignments=tuple(l[1] for l in lines),
    )


def transition_frequencies(p: ZfsParams, b: FieldVec) -> OdmrLineSet:
    """Pairwise eigenvalue differences of the spin Hamiltonian, ascending."""
    ev = np.linalg.eigvalsh(build_hamiltonian(p, b))
    diffs = [(ev[1] - ev[0], (0, 1)), (ev[2] - ev[1], (1, 2)), (ev[2] - ev[0], (0, 2))]
    diffs.sort(key=lambda t: t[0])
    return OdmrLineSet(
        frequencies=np.array([d[0] for d in diffs]),
        assignments=tuple(d[1] for d in diffs),
    )


def _batched_lines(D, E, g, axes, b_vectors):
    """Sorted transition frequencies for a stack of field vectors, (n, 3)."""
    b_def = b_vectors @ axes.T
    gam = g * MU_B_MHZ_PER_G
    hz = D * (SPIN1_Z @ SPIN1_Z - (2.0 / 3.0) * SPIN1_ID) + E * (
        SPIN1_X @ SPIN1_X - SPIN1_Y @ SPIN1_Y
    )
    h = (
        hz[None, :, :]
        + gam * b_def[:, 0, None, None] * SPIN1_X
        + gam * b_def[:, 1, None, None] * SPIN1_Y
        + gam * b_def[:, 2, None, None] * SPIN1_Z
    )
    ev = np.linalg.eigvalsh(h)
    lines = np.stack([ev[:, 1] - ev[:, 0], ev[:, 2] - ev[:, 1], ev[:, 2] - ev[:, 0]], axis=1)
    lines.sort(axis=1)
    return lines


def rotation_matrix(axis, angle_rad):
    """Rotation by angle_rad about the given axis (Rodrigues formula)."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle_rad) * k + (1 - np.cos(angle_rad)) * (k @ k)


def plane_basis(plane_normal):
    """Orthonormal (u, v) spanning the plane perpendicular to plane_normal.

    For normal [001] this gives u=[100], v=[010], so angle 0 points along
    [100] and angles increase toward [010].
    """
    n = np.asarray(plane_normal, dtype=float)
    n = n / np.linalg.norm(n)
    ref = np.array([1.0, 0.0, 0.0])
    if abs(n @ ref) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    u = ref - (ref @ n) * n
    u = u / np.linalg.norm(u)
    v = np.cross(n, u)
    return u, v


def orientation_family():
    """The six <110>-oriented defect frames as ZfsParams-ready axis triads.

    Each triad takes z along one of the six <110> axes, x along the unique
    <100> axis perpendicular to it (e.g. x||[100], y||[011], z||[011bar]),
    and y = z cross x to make the triad right-handed.
    """
    z_axes = [
        (1, 1, 0), (1, -1, 0), (1, 0, 1), (1, 0, -1), (0, 1, 1), (0, 1, -1),
    ]
    triads = []
    for z in z_axes:
        z = np.asarray(z, dtype=float) / np.sqrt(2.0)
        x = np.zeros(3)
        x[np.argmin(np.abs(z))] = 1.0
        y = np.cross(z, x)
        triads.append(np.vstack([x, y, z]))
    return triads


@dataclass
class SweepTable:
    """Line frequencies on an (angle, orientation) grid.

    lines has shape (n_orientations, n_angles, 3), ascending along the last
    axis.
    """

    angles_deg: np.ndarray
    orientation_axes: list
    lines: np.ndarray
    magnitude_g: float
    plane_normal: np.ndarray

    def rows(self):
        """Flat (orientation, angle_deg, f1, f2, f3) record iterator."""
        for i in range(len(self.orientation_axes)):
            for j, a in enumerate(self.angles_deg):
                yield (i, float(a), *map(float, self.lines[i, j]))


def angular_sweep(p: ZfsParams, magnitude, plane_normal, angles_deg,
                  orientations=None) -> SweepTable:
    """Rotate a field of fixed magnitude in a crystal plane and record lines.

    orientations is a list of axis triads (defaults to the defect's own
    frame); D, E, g are taken from p for every orientation.
    """
    angles_deg = np.asarray(angles_deg, dtype=float)
    if angles_deg.size == 0:
        raise InvalidParameterError("angle grid is empty")
    if np.any(np.diff(angles_deg) <= 0) and angles_deg.size > 1:
        raise InvalidParameterError("angle grid must be strictly increasing")
    u, v = plane_basis(plane_normal)
    rad = np.deg2rad(angles_deg)
    b_vectors = magnitude * (np.outer(np.cos(rad), u) + np.outer(np.sin(rad), v))
    if orientations is None:
        orientations = [p.axes]
    lines = np.empty((len(orientations), angles_deg.size, 3))
    for i, axes in enumerate(orientations):
        lines[i] = _batched_lines(p.D, p.E, p.g, _check_axes(axes), b_vectors)
    return SweepTable(
        angles_deg=angles_deg,
        orientation_axes=list(orientations),
        lines=lines,
        magnitude_g=float(magnitude),
        plane_normal=np.asarray(plane_normal, dtype=float),
    )


def _combinations3(k):
    return list(combinations(range(3), k))


@dataclass
class OdmrFitResult:
    params: ZfsParams
    residuals: np.ndarray
    covariance: np.ndarray
    param_names: tuple
    rms_mhz: float
    n_iter: int
    converged: bool


def _observed_array(observed):
    obs = np.asarray(observed, dtype=float)
    if obs.ndim != 2 or obs.shape[1] not in (2, 3):
        raise InvalidParameterError(
            "observed must be rows of (angle_deg, freq_MHz[, sigma_MHz])"
        )
    if obs.shape[1] == 2:
        obs = np.column_stack([obs, np.ones(len(obs))])
    if np.any(obs[:, 2] <= 0):
        raise InvalidParameterError("sigma_MHz must be positive")
    return obs


def fit_odmr(observed, init: ZfsParams, magnitude, plane_normal=(0, 0, 1),
             fit_orientation=False, fit_tilt=False, max_iter=100,
             tol=1e-12) -> OdmrFitResult:
    """Weighted least-squares fit of (D, E) [and orientation] to ODMR lines.

    observed: rows of (angle_deg, freq_MHz, sigma_MHz) where the field of
    fixed magnitude was rotated in the plane perpendicular to plane_normal.
    Observed frequencies sharing an angle are matched to distinct simulated
    branches by order-preserving nearest assignment (a lone frequency simply
    takes its nearest branch); this keeps multiple observations from
    collapsing onto one branch. fit_orientation frees two rotations moving
    the defect z axis; fit_tilt frees the rotation about z that reorients
    the minor axes (the tilt suggested by imperfect high-symmetry fits).
    Damped Gauss-Newton with a Levenberg schedule (damping starts at 1e-3,
    x10 on reject, /10 on accept); exhausting the damping schedule without
    an improving step counts as stationary.

    The initial guess must lie in the basin of the global minimum; ODMR
    branch crossings make the problem multimodal.
    """
    obs = _observed_array(observed)
    if len(obs) < 6:
        raise InvalidParameterError("need at least 6 data points")
    u, v = plane_basis(plane_normal)
    rad = np.deg2rad(obs[:, 0])
    b_vectors = magnitude * (np.outer(np.cos(rad), u) + np.outer(np.sin(rad), v))
    sigma = obs[:, 2]
    freqs = obs[:, 1]
    groups = {}
    for i, a in enumerate(obs[:, 0]):
        groups.setdefault(float(a), []).append(i)

    names = ["D", "E"]
    if fit_orientation:
        names += ["rot_x", "rot_y"]
    if fit_tilt:
        names += ["tilt_z"]
    names = tuple(names)

    def axes_for(theta):
        axes = init.axes
        rot = np.eye(3)
        idx = 2
        if fit_orientation:
            rot = rotation_matrix(init.axes[1], theta[idx + 1]) @ rotation_matrix(
                init.axes[0], theta[idx]
            )
            idx += 2
        if fit_tilt:
            rot = rotation_matrix(init.axes[2], theta[idx]) @ rot
        return axes @ rot.T

    def residuals(theta):
        lines = _batched_lines(theta[0], theta[1], init.g, axes_for(theta), b_vectors)
        out = np.empty(len(obs))
        for idx in groups.values():
            pred = lines[idx[0]]
            if len(idx) <= 3:
                # collision-free: observed lines at one angle go to distinct
                # branches, order preserved (optimal 1-d matching)
                order = np.argsort(freqs[idx])
                rows = [idx[k] for k in order]
                best = None
                for combo in _combinations3(len(rows)):
                    d = np.array([freqs[r] - pred[c] for r, c in zip(rows, combo)])
                    cost = float(np.sum((d / sigma[rows]) ** 2))
                    if best is None or cost < best[0]:
                        best = (cost, d)
                out[rows] = best[1] / sigma[rows]
            else:
                for r in idx:
                    out[r] = (pred[np.argmin(np.abs(pred - freqs[r]))] - freqs[r])
                    out[r] = -out[r] / sigma[r]
        return out

    theta = np.zeros(len(names))
    theta[0], theta[1] = init.D, init.E

    def jacobian(theta):
        r0 = residuals(theta)
        J = np.empty((len(obs), len(theta)))
        for k in range(len(theta)):
            step = 1e-6 * max(1.0, abs(theta[k]))
            tp = theta.copy()
            tp[k] += step
            J[:, k] = (residuals(tp) - r0) / step
        return J, r0

    lam = 1e-3
    converged = False
    n_iter = 0
    r = residuals(theta)
    cost = float(r @ r)
    for n_iter in range(1, max_iter + 1):
        J, r = jacobian(theta)
        jtj = J.T @ J
        jtr = J.T @ r
        accepted = False
        for _ in range(50):
            damped = jtj + lam * np.diag(np.clip(np.diag(jtj), 1e-12, None))
            try:
                step = np.linalg.solve(damped, -jtr)
            except np.linalg.LinAlgError:
                raise FitDegenerateError("normal equations are singular")
            if not np.all(np.isfinite(step)):
                raise FitDegenerateError("normal equations are singular")
            trial = theta + step
            r_trial = residuals(trial)
            trial_cost = float(r_trial @ r_trial)
            if trial_cost <= cost:
                theta, cost = trial, trial_cost
                lam = max(lam / 10.0, 1e-12)
                accepted = True
                break
            lam *= 10.0
            if lam > 1e12:
                break
        if not accepted:
            converged = True  # no improving step exists at any damping
            break
        if np.linalg.norm(step) < tol * (1.0 + np.linalg.norm(theta)):
            converged = True
            break
    if not converged and n_iter >= max_iter:
        raise ConvergenceError(
            "ODMR fit did not converge after %d iterations" % max_iter,
            last_iterate=dict(zip(names, theta)),
            diagnostics={"cost": cost},
        )

    J, r = jacobian(theta)
    jtj = J.T @ J
    dof = max(len(obs) - len(theta), 1)
    s2 = cost / dof
    try:
        cov = s2 * np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        raise FitDegenerateError("normal equations are singular at the optimum")

    fitted = replace(init, D=abs(theta[0]), E=abs(theta[1]), axes=axes_for(theta))
    return OdmrFitResult(
        params=fitted,
        residuals=r * sigma,
        covariance=cov,
        param_names=names,
        rms_mhz=float(np.sqrt(np.mean((r * sigma) ** 2))),
        n_iter=n_iter,
        converged=True,
    )
