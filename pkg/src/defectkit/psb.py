"""Linear symmetric-mode phonon-sideband model.

An optical band is the ZPL shape convolved with a Poisson-weighted series of
n-phonon bands,

    I(w) = exp(-S) * I0(w) (x) [ delta(w) + sum_n S^n/n! In(w) ],

where S is the total Huang-Rhys factor and In is the n-fold self-convolution
of the one-phonon spectral density I1 (unit norm, supported on [0, Omega]
with Omega the lattice phonon cutoff). This module synthesizes bands from a
one-phonon density and inverts measured bands back to I1, either directly in
the Fourier domain or by the iterative subtraction scheme, and compares the
result against a phonon density of states.

All bands live on uniform energy grids (meV). Bands entering convolution or
embedding arithmetic must additionally sit on integer multiples of the
spacing so that convolutions reduce to exact index arithmetic (absolute-axis
emission spectra may sit anywhere). Band integrals use the rectangle rule,
under which discrete convolution preserves norms exactly.
"""
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve, find_peaks

from .constants import DIAMOND_PHONON_CUTOFF_MEV
from .errors import DivergenceError, InvalidParameterError

_ALIGN_TOL = 1e-6


def _check_grid(grid):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise InvalidParameterError("grid must be a 1-d array with >= 2 points")
    steps = np.diff(grid)
    d = steps[0]
    if d <= 0 or np.max(np.abs(steps - d)) > 1e-9 * abs(d):
        raise InvalidParameterError("grid must be uniform and ascending")
    return grid


@dataclass
class SpectralBand:
    """Intensity values on a uniform energy grid (meV)."""

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.grid = _check_grid(self.grid)
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise InvalidParameterError("values must match the grid shape")
        vmax = np.max(np.abs(v)) if v.size else 0.0
        if np.any(v < -1e-12 * max(vmax, 1.0)):
            warnings.warn(
                "negative intensities beyond numerical residue; clipping",
                RuntimeWarning,
            )
        self.values = np.clip(v, 0.0, None)

    @property
    def spacing(self):
        return float(self.grid[1] - self.grid[0])

    @property
    def start_index(self):
        """Grid origin in units of the spacing (exact integer).

        Convolution and embedding arithmetic needs grid points on integer
        multiples of the spacing; bands that only get read (emission
        spectra on absolute photon-energy axes) may sit anywhere.
        """
        start = self.grid[0] / self.spacing
        if abs(start - round(start)) > _ALIGN_TOL:
            raise InvalidParameterError(
                "grid points must be integer multiples of the spacing"
            )
        return int(round(start))

    def integral(self):
        return float(self.values.sum() * self.spacing)

    def normalized(self):
        norm = self.integral()
        if norm <= 0:
            raise InvalidParameterError("cannot normalize a zero band")
        return SpectralBand(self.grid, self.values / norm)


def make_grid(lo_mev, hi_mev, spacing_mev=0.25):
    """Uniform grid on multiples of the spacing covering [lo, hi]."""
    i0 = int(np.floor(lo_mev / spacing_mev + 1e-12))
    i1 = int(np.ceil(hi_mev / spacing_mev - 1e-12))
    return spacing_mev * np.arange(i0, i1 + 1)


@dataclass
class ZplShape:
    """Zero-phonon line shape: narrow, centered at zero, unit norm."""

    band: SpectralBand

    def __post_init__(self):
        if abs(self.band.integral() - 1.0) > 1e-9:
            raise InvalidParameterError("ZPL shape must have unit norm")

    @classmethod
    def delta(cls, spacing_mev):
        """Single-bin line at w=0 (the resolution-limited ideal ZPL)."""
        grid = spacing_mev * np.arange(-1, 2)
        values = np.zeros(3)
        values[1] = 1.0 / spacing_mev
        return cls(SpectralBand(grid, values))

    @classmethod
    def gaussian(cls, spacing_mev, sigma_mev, extent=5.0):
        n = max(int(np.ceil(extent * sigma_mev / spacing_mev)), 1)
        grid = spacing_mev * np.arange(-n, n + 1)
        values = np.exp(-0.5 * (grid / sigma_mev) ** 2)
        band = SpectralBand(grid, values)
        return cls(band.normalized())


@dataclass
class OnePhononBand:
    """One-phonon spectral density: unit norm, supported on [0, cutoff]."""

    band: SpectralBand
    cutoff_mev: float = DIAMOND_PHONON_CUTOFF_MEV
    huang_rhys: float | None = None

    def __post_init__(self):
        b = self.band
        if abs(b.integral() - 1.0) > 1e-6:
            raise InvalidParameterError("one-phonon band must have unit norm")
        outside = (b.grid < -1e-9) | (b.grid > self.cutoff_mev + 1e-9)
        if np.any(b.values[outside] > 1e-12 * b.values.max()):
            raise InvalidParameterError(
                "one-phonon band has weight outside [0, cutoff]"
            )

    @property
    def grid(self):
        return self.band.grid

    @property
    def values(self):
        return self.band.values


def _as_band(obj):
    return obj.band if isinstance(obj, (OnePhononBand, ZplShape)) else obj


def convolve_bands(f, g, method="fft") -> SpectralBand:
    """Linear convolution of two bands, (f (x) g)(w) = int f(w-x) g(x) dx.

    method "fft" zero-pads internally (scipy.signal.fftconvolve) so the
    result is the linear, not circular, convolution; "direct" is the O(N^2)
    sliding sum kept as an independent cross-check.
    """
    f, g = _as_band(f), _as_band(g)
    d = f.spacing
    if abs(g.spacing - d) > 1e-9 * d:
        raise InvalidParameterError("bands must share one grid spacing")
    if method == "fft":
        vals = fftconvolve(f.values, g.values) * d
    elif method == "direct":
        n = f.values.size + g.values.size - 1
        vals = np.zeros(n)
        for j, gj in enumerate(g.values):
            if gj != 0.0:
                vals[j:j + f.values.size] += f.values * gj
        vals *= d
    else:
        raise InvalidParameterError('method must be "fft" or "direct"')
    start = f.start_index + g.start_index
    grid = d * np.arange(start, start + vals.size)
    return SpectralBand(grid, vals)


def n_phonon_bands(i1: OnePhononBand, n_max, method="fft"):
    """The bands I1..In_max from successive self-convolutions of I1.

    Each In keeps unit norm (rectangle-rule convolution is exactly
    norm-preserving) and is supported on [0, n*cutoff]; the mean phonon
    energy grows linearly with n.
    """
    if n_max < 1:
        raise InvalidParameterError("n_max must be >= 1")
    bands = [_as_band(i1)]
    for _ in range(2, n_max + 1):
        bands.append(convolve_bands(bands[-1], i1, method=method))
    return bands


def poisson_n_max(s, tol=1e-8):
    """Smallest truncation order with Poisson tail sum below tol."""
    if s < 0:
        raise InvalidParameterError("Huang-Rhys factor must be >= 0")
    term = np.exp(-s)
    tail = 1.0 - term
    n = 0
    while tail >= tol and n < 400:
        n += 1
        term *= s / n
        tail -= term
    return max(n, 1)


def poisson_truncation_bound(s, n_max):
    """Total Poisson weight beyond n_max (the norm deficit of a synthesis)."""
    term = np.exp(-s)
    acc = term
    for n in range(1, n_max + 1):
        term *= s / n
        acc += term
    return max(1.0 - acc, 0.0)


def synthesize_band(i1: OnePhononBand, s, i0: ZplShape, n_max=None) -> SpectralBand:
    """Build the full optical band from the one-phonon density.

    Truncates the Poisson series at n_max (default: tail weight < 1e-8); the
    output norm equals 1 minus the truncation bound and the ZPL carries the
    Debye-Waller weight exp(-S).
    """
    if n_max is None:
        n_max = poisson_n_max(s)
    i1_band = _as_band(i1)
    if i1_band.start_index != 0:
        raise InvalidParameterError("one-phonon band grid must start at zero")
    d = i1_band.spacing
    bands = n_phonon_bands(i1, n_max)
    # Poisson-weighted comb of n-phonon bands plus the discrete ZPL delta
    n_comb = bands[-1].values.size
    comb = np.zeros(n_comb)
    comb[0] += 1.0 / d  # delta(w)
    weight = 1.0
    for n, band_n in enumerate(bands, start=1):
        weight *= s / n
        comb[: band_n.values.size] += weight * band_n.values
    comb_band = SpectralBand(d * np.arange(n_comb), comb)
    out = convolve_bands(i0, comb_band)
    return SpectralBand(out.grid, np.exp(-s) * out.values)


def estimate_huang_rhys(band: SpectralBand, zpl_window):
    """S = -ln(ZPL fraction): the ZPL weight is the Debye-Waller factor.

    zpl_window is the (lo, hi) energy range in meV containing the resolved
    ZPL and nothing else.
    """
    lo, hi = zpl_window
    mask = (band.grid >= lo) & (band.grid <= hi)
    total = band.integral()
    if total <= 0:
        raise InvalidParameterError("band has no weight")
    frac = float(band.values[mask].sum() * band.spacing) / total
    if frac <= 0.0 or frac > 1.0:
        raise InvalidParameterError("ZPL fraction must lie in (0, 1]")
    # fraction exactly 1 is the uncoupled limit, S = 0
    return -np.log(frac)


def _circular_buffers(band: SpectralBand, i0: ZplShape):
    """Embed band and ZPL on a power-of-two circular grid with w=0 at 0."""
    i0_band = _as_band(i0)
    d = band.spacing
    if abs(i0_band.spacing - d) > 1e-9 * d:
        raise InvalidParameterError("band and ZPL must share one grid spacing")
    span = band.values.size + i0_band.values.size
    n = int(2 ** np.ceil(np.log2(2 * span)))
    buf_band = np.zeros(n)
    buf_zpl = np.zeros(n)
    idx = (band.start_index + np.arange(band.values.size)) % n
    buf_band[idx] = band.values
    idx0 = (i0_band.start_index + np.arange(i0_band.values.size)) % n
    buf_zpl[idx0] = i0_band.values
    return buf_band, buf_zpl, n


def direct_fourier_deconvolve(band: SpectralBand, s, i0: ZplShape,
                              cutoff_mev=DIAMOND_PHONON_CUTOFF_MEV,
                              floor=1e-12) -> OnePhononBand:
    """One-phonon band by Fourier-domain inversion of the Poisson series.

    In the transform domain the band factorizes as F[I] = exp(-S) F[I0]
    exp(S F[I1]), so F[I1] = 1 + log(F[I]/F[I0]) / S with the complex log
    taken on the unwrapped phase. Transform magnitudes are floored at
    floor*max before the log to keep spectral noise out of the logarithm.
    The result is clipped to [0, cutoff] and renormalized.

    The inversion is noise-sensitive and is intended as an initial estimate
    for iterative_deconvolve rather than as a final answer.
    """
    if s <= 0:
        raise InvalidParameterError("Huang-Rhys factor must be positive")
    buf_band, buf_zpl, n = _circular_buffers(band, i0)
    d = band.spacing
    bt = np.fft.fft(buf_band) * d
    zt = np.fft.fft(buf_zpl) * d
    ratio = bt / np.where(np.abs(zt) < floor, floor, zt)
    mag = np.abs(ratio)
    mag = np.maximum(mag, floor * mag.max())
    log_ratio = np.log(mag) + 1j * np.unwrap(np.angle(ratio))
    u = (log_ratio + s) / s
    i1_buf = np.real(np.fft.ifft(u)) / d
    n_keep = int(round(cutoff_mev / d)) + 1
    vals = np.clip(i1_buf[:n_keep], 0.0, None)
    grid = d * np.arange(n_keep)
    return OnePhononBand(SpectralBand(grid, vals).normalized(),
                         cutoff_mev=cutoff_mev, huang_rhys=s)


def smooth_and_taper(raw: SpectralBand, cutoff_mev=DIAMOND_PHONON_CUTOFF_MEV,
                     smooth_bins=5, taper_fraction=0.1) -> OnePhononBand:
    """Condition a raw one-phonon estimate for the iterative scheme.

    Applies a moving average of smooth_bins, then a cosine ramp to zero over
    taper_fraction of the cutoff at both ends of [0, cutoff], clips the
    result to that support and renormalizes.
    """
    d = raw.spacing
    n_keep = int(round(cutoff_mev / d)) + 1
    grid = d * np.arange(n_keep)
    vals = np.zeros(n_keep)
    src = (raw.start_index + np.arange(raw.values.size))
    inside = (src >= 0) & (src < n_keep)
    vals[src[inside]] = raw.values[inside]
    if smooth_bins > 1:
        kernel = np.ones(smooth_bins) / smooth_bins
        vals = np.convolve(vals, kernel, mode="same")
    ramp = np.ones(n_keep)
    n_taper = min(max(int(round(taper_fraction * cutoff_mev / d)), 1), n_keep // 2)
    up = 0.5 * (1.0 - np.cos(np.pi * np.arange(n_taper) / n_taper))
    ramp[:n_taper] *= up
    ramp[-n_taper:] *= up[::-1]
    vals = np.clip(vals * ramp, 0.0, None)
    return OnePhononBand(SpectralBand(grid, vals).normalized(),
                         cutoff_mev=cutoff_mev)


@dataclass
class ConvergenceTrace:
    """Iteration history of the deconvolution loop."""

    converged: bool
    n_iter: int
    step_l2: list = field(default_factory=list)
    resync_l2: list = field(default_factory=list)


def _l2(values, d):
    return float(np.sqrt(np.sum(values**2) * d))


def iterative_deconvolve(band: SpectralBand, s, i0: ZplShape,
                         i1_init: OnePhononBand, max_iter=50, tol=1e-6,
                         cutoff_mev=None, n_max=None):
    """Refine a one-phonon estimate by iterative series subtraction.

    Each pass rebuilds the n-phonon bands from the current iterate and
    subtracts everything but the single-phonon term from the measured band:

        I1_new = exp(S) I - I0 - sum_{n>=2} S^n/n! I0 (x) In,

    then clips the result to [0, cutoff], drops negatives and renormalizes.
    Iteration stops when the L2 change of the iterate falls below tol, and
    aborts with DivergenceError (carrying the best iterate) if the
    resynthesis residual grows three passes in a row. Returns the final
    OnePhononBand and a ConvergenceTrace.
    """
    if cutoff_mev is None:
        cutoff_mev = i1_init.cutoff_mev
    if n_max is None:
        n_max = poisson_n_max(s)
    if tol <= 0:
        raise InvalidParameterError("tol must be positive")
    d = band.spacing
    i0_band = _as_band(i0)
    n_keep = int(round(cutoff_mev / d)) + 1

    def restrict(values_full, start_index):
        out = np.zeros(n_keep)
        src = start_index + np.arange(values_full.size)
        inside = (src >= 0) & (src < n_keep)
        out[src[inside]] = values_full[inside]
        return out

    # measured-band terms of the update, embedded on the [0, cutoff] window
    lhs = np.exp(s) * restrict(band.values, band.start_index)
    lhs -= restrict(i0_band.values, i0_band.start_index)

    current = restrict(i1_init.values, i1_init.band.start_index)
    norm = current.sum() * d
    if norm <= 0:
        raise InvalidParameterError("initial estimate has no weight")
    current /= norm

    trace = ConvergenceTrace(converged=False, n_iter=0)
    best = current
    best_resid = np.inf
    grow_streak = 0
    grid = d * np.arange(n_keep)
    for it in range(1, max_iter + 1):
        i1_cur = OnePhononBand(SpectralBand(grid, current), cutoff_mev=cutoff_mev)
        bands = n_phonon_bands(i1_cur, n_max)
        # Poisson-weighted multi-phonon remainder, n >= 2
        acc = np.zeros(bands[-1].values.size)
        weight = s
        for n in range(2, n_max + 1):
            weight *= s / n
            acc[: bands[n - 1].values.size] += weight * bands[n - 1].values
        remainder = convolve_bands(
            i0, SpectralBand(d * np.arange(acc.size), acc)
        )
        update = lhs - restrict(remainder.values, remainder.start_index)
        update = np.clip(update, 0.0, None)
        total = update.sum() * d
        if total <= 0:
            raise DivergenceError(
                "iterative update lost all weight",
                best_iterate=OnePhononBand(SpectralBand(grid, best),
                                           cutoff_mev=cutoff_mev),
                diagnostics=trace,
            )
        update /= total

        resynth = synthesize_band(
            OnePhononBand(SpectralBand(grid, update), cutoff_mev=cutoff_mev),
            s, i0, n_max=n_max,
        )
        joint_lo = min(band.start_index, resynth.start_index)
        joint_hi = max(band.start_index + band.values.size,
                       resynth.start_index + resynth.values.size)
        width = joint_hi - joint_lo
        a = np.zeros(width)
        b = np.zeros(width)
        a[band.start_index - joint_lo:][: band.values.size] = band.values
        b[resynth.start_index - joint_lo:][: resynth.values.size] = resynth.values
        resid = _l2(a - b, d)

        step = _l2(update - current, d)
        trace.n_iter = it
        trace.step_l2.append(step)
        trace.resync_l2.append(resid)
        current = update
        if resid < best_resid:
            best, best_resid = current, resid
            grow_streak = 0
        elif resid > 1.05 * best_resid:
            # material growth only; jitter around the noise floor is normal
            grow_streak += 1
            if grow_streak >= 3:
                raise DivergenceError(
                    "resynthesis residual grew for three consecutive passes",
                    best_iterate=OnePhononBand(SpectralBand(grid, best),
                                               cutoff_mev=cutoff_mev),
                    diagnostics=trace,
                )
        if step < tol:
            trace.converged = True
            break
    result = OnePhononBand(SpectralBand(grid, current), cutoff_mev=cutoff_mev,
                           huang_rhys=s)
    return result, trace


def bandshape_from_emission(emission: SpectralBand, omega0_mev,
                            margin_mev=5.0) -> SpectralBand:
    """Turn an emission spectrum into the bandshape in phonon energy.

    The emission axis is photon energy; the bandshape is I_em at phonon
    energy w = omega0 - E divided by the cube of the photon energy (the
    spontaneous-emission frequency factor), renormalized to unit area. The
    ZPL position is snapped to the nearest grid point so the phonon-energy
    grid stays on spacing multiples; a margin of negative phonon energies is
    kept to hold the ZPL's own linewidth.
    """
    if not emission.grid[0] <= omega0_mev <= emission.grid[-1]:
        raise InvalidParameterError("omega0 lies outside the emission grid")
    if np.any(emission.grid <= 0):
        raise InvalidParameterError("photon-energy grid must be positive")
    d = emission.spacing
    zpl_idx = int(round((omega0_mev - emission.grid[0]) / d))
    omega0 = emission.grid[zpl_idx]
    # snap onto exact spacing multiples so the band composes with the
    # convolution index arithmetic downstream
    phonon = d * np.round((omega0 - emission.grid[::-1]) / d)
    vals = (emission.values / emission.grid**3)[::-1]
    keep = phonon >= -margin_mev - 1e-9 * d
    band = SpectralBand(phonon[keep], vals[keep])
    return band.normalized()


@dataclass
class PeakMatch:
    energy_mev: float
    height: float
    prominence: float
    nearest_dos_peak_mev: float
    distance_mev: float


@dataclass
class CriticalPointReport:
    """One-phonon band features paired against lattice DOS critical points."""

    peaks: list
    above_cutoff_fraction: float
    local_mode_flag: bool
    overlay: np.ndarray  # columns: energy, band (unit max), dos (unit max)


def critical_point_report(i1, dos: SpectralBand, prominence_frac=0.05,
                          local_mode_threshold=0.01,
                          cutoff_mev=None) -> CriticalPointReport:
    """Locate one-phonon features and compare them with the phonon DOS.

    i1 may be a OnePhononBand or a raw SpectralBand estimate that still
    carries weight above the cutoff. Peaks are local maxima with prominence
    above prominence_frac of the band maximum, each paired with the nearest
    DOS maximum. Band weight above the cutoff beyond local_mode_threshold
    raises the local-mode flag (coupling to a quasi-local vibration rather
    than the lattice continuum).
    """
    if cutoff_mev is None:
        cutoff_mev = getattr(i1, "cutoff_mev", DIAMOND_PHONON_CUTOFF_MEV)
    band = _as_band(i1)
    vals = band.values
    idx, props = find_peaks(vals, prominence=prominence_frac * vals.max())
    dos_idx, _ = find_peaks(dos.values, prominence=0.01 * dos.values.max())
    dos_peaks = dos.grid[dos_idx] if dos_idx.size else np.array([])
    peaks = []
    for j, i in enumerate(idx):
        energy = float(band.grid[i])
        if dos_peaks.size:
            nearest = float(dos_peaks[np.argmin(np.abs(dos_peaks - energy))])
        else:
            nearest = float("nan")
        peaks.append(
            PeakMatch(
                energy_mev=energy,
                height=float(vals[i]),
                prominence=float(props["prominences"][j]),
                nearest_dos_peak_mev=nearest,
                distance_mev=abs(energy - nearest) if dos_peaks.size else float("nan"),
            )
        )
    above = band.grid > cutoff_mev
    total = band.integral()
    frac = float(vals[above].sum() * band.spacing) / total if np.any(above) else 0.0
    dos_on_grid = np.interp(band.grid, dos.grid, dos.values, left=0.0, right=0.0)
    overlay = np.column_stack([
        band.grid,
        vals / vals.max(),
        dos_on_grid / dos_on_grid.max() if dos_on_grid.max() > 0 else dos_on_grid,
    ])
    return CriticalPointReport(
        peaks=peaks,
        above_cutoff_fraction=frac,
        local_mode_flag=frac > local_mode_threshold,
        overlay=overlay,
    )
