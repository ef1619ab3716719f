"""Dataset ingestion, validation and delimited-text emission.

Input files are delimited text (whitespace or comma separated, '#' comments)
with JSON sidecars for scalar metadata. Everything is converted to the
toolkit's canonical units at this boundary: MHz, Gauss, ns, meV, cm^2.
"""
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .constants import HC_EV_NM
from .errors import SchemaError
from .g2_processing import CoincidenceHistogram
from .photodynamics import RateParams
from .psb import SpectralBand, make_grid

log = logging.getLogger(__name__)

KINDS = ("odmr_table", "g2_histogram", "emission_spectrum", "dos_table", "rates_json")


@dataclass(frozen=True)
class DatasetDescriptor:
    """A path plus the schema it is expected to satisfy.

    units carries per-kind declarations (e.g. the emission axis type) and
    overrides the sidecar; sidecar defaults to '<path>.json' where one is
    needed.
    """

    path: str
    kind: str
    units: dict = None
    sidecar: str = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown dataset kind {self.kind!r}")

    def sidecar_path(self):
        return Path(self.sidecar) if self.sidecar else Path(str(self.path) + ".json")


def sha256_of(path):
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def read_table(path, min_cols, max_cols=None):
    """Parse a delimited numeric table; errors name the offending line."""
    max_cols = max_cols or min_cols
    rows = []
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: file does not exist")
    width = None
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        try:
            row = [float(p) for p in parts]
        except ValueError:
            raise SchemaError(f"{path}:{lineno}: non-numeric value in {raw!r}")
        if not min_cols <= len(row) <= max_cols:
            raise SchemaError(
                f"{path}:{lineno}: expected {min_cols}"
                + (f"-{max_cols}" if max_cols != min_cols else "")
                + f" columns, got {len(row)}"
            )
        if width is not None and len(row) != width:
            raise SchemaError(f"{path}:{lineno}: ragged row")
        width = len(row)
        rows.append(row)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return np.asarray(rows, dtype=float)


def _read_sidecar(desc, required):
    sc = desc.sidecar_path()
    meta = {}
    if sc.exists():
        try:
            meta = json.loads(sc.read_text())
        except json.JSONDecodeError as err:
            raise SchemaError(f"{sc}: invalid JSON sidecar: {err}")
    if desc.units:
        meta.update(desc.units)
    missing = [k for k in required if k not in meta]
    if missing:
        raise SchemaError(f"{desc.path}: sidecar missing keys {missing}")
    return meta


@dataclass
class EmissionSpectrum:
    """Emission intensity on a uniform photon-energy grid with ZPL marker."""

    band: SpectralBand
    zpl_mev: float


def _resample_uniform(x, y, spacing):
    grid = make_grid(x.min(), x.max(), spacing)
    return SpectralBand(grid, np.interp(grid, x, y, left=0.0, right=0.0))


def ingest(desc: DatasetDescriptor):
    """Parse, validate and unit-convert a dataset.

    Returns the kind-specific object:
      odmr_table        -> (n, 3) array of (angle_deg, freq_MHz, sigma_MHz)
      g2_histogram      -> (CoincidenceHistogram, rho)
      emission_spectrum -> EmissionSpectrum (meV axis, ascending)
      dos_table         -> SpectralBand (meV axis)
      rates_json        -> RateParams
    """
    if desc.kind == "odmr_table":
        data = read_table(desc.path, 2, 3)
        if data.shape[1] == 2:
            data = np.column_stack([data, np.ones(len(data))])
        if np.any(data[:, 2] <= 0):
            raise SchemaError(f"{desc.path}: sigma_MHz must be positive")
        log.info("odmr_table %s: %d rows, %.1f-%.1f deg", desc.path, len(data),
                 data[:, 0].min(), data[:, 0].max())
        return data

    if desc.kind == "g2_histogram":
        data = read_table(desc.path, 2)
        meta = _read_sidecar(
            desc, ["n1", "n2", "bin_width_ns", "accumulation_time_s"]
        )
        hist = CoincidenceHistogram(
            bin_centers=data[:, 0],
            counts=data[:, 1],
            bin_width_ns=float(meta["bin_width_ns"]),
            accumulation_time_s=float(meta["accumulation_time_s"]),
            n1=float(meta["n1"]),
            n2=float(meta["n2"]),
        )
        rho = float(meta.get("rho", 1.0))
        log.info("g2_histogram %s: %d bins, %.4g total counts", desc.path,
                 len(data), data[:, 1].sum())
        return hist, rho

    if desc.kind == "emission_spectrum":
        data = read_table(desc.path, 2)
        meta = _read_sidecar(desc, ["axis", "zpl"])
        axis = meta["axis"]
        spacing = float(meta.get("spacing_mev", 0.25))
        x, y = data[:, 0], data[:, 1]
        steps = np.diff(x)
        if not (np.all(steps > 0) or np.all(steps < 0)):
            raise SchemaError(f"{desc.path}: spectrum axis must be monotone")
        if axis == "wavelength_nm":
            if np.any(x <= 0):
                raise SchemaError(f"{desc.path}: wavelengths must be positive")
            x = 1e3 * HC_EV_NM / x
            zpl = 1e3 * HC_EV_NM / float(meta["zpl"])
        elif axis == "energy_mev":
            zpl = float(meta["zpl"])
        else:
            raise SchemaError(f"{desc.path}: axis must be wavelength_nm or energy_mev")
        order = np.argsort(x)
        x, y = x[order], y[order]
        band = _resample_uniform(x, np.clip(y, 0.0, None), spacing)
        log.info("emission_spectrum %s: %d points, %.1f-%.1f meV", desc.path,
                 band.grid.size, band.grid[0], band.grid[-1])
        return EmissionSpectrum(band=band, zpl_mev=zpl)

    if desc.kind == "dos_table":
        data = read_table(desc.path, 2)
        if np.any(np.diff(data[:, 0]) <= 0):
            raise SchemaError(f"{desc.path}: DOS energy axis must be ascending")
        spacing = float((desc.units or {}).get("spacing_mev", 0.25))
        band = _resample_uniform(data[:, 0], np.clip(data[:, 1], 0.0, None), spacing)
        log.info("dos_table %s: %d points", desc.path, band.grid.size)
        return band

    if desc.kind == "rates_json":
        try:
            payload = json.loads(Path(desc.path).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise SchemaError(f"{desc.path}: {err}")
        keys = {"k_ex", "k_f", "k_isc", "k0", "km", "kp"}
        missing = keys - payload.keys()
        if missing:
            raise SchemaError(f"{desc.path}: rates JSON missing {sorted(missing)}")
        extra = payload.keys() - keys - {"beta", "eta"}
        if extra:
            raise SchemaError(f"{desc.path}: unknown rate keys {sorted(extra)}")
        return RateParams(**payload)

    raise SchemaError(f"unknown dataset kind {desc.kind!r}")


def write_table(path, columns, header):
    """Write named columns as '#'-headed delimited text (plot-ready)."""
    arrays = [np.asarray(c, dtype=float) for c in columns]
    lines = ["# " + "\t".join(header)]
    for row in zip(*arrays):
        lines.append("\t".join(f"{v:.10g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_json(path, payload):
    """Deterministic JSON emission (sorted keys, fixed separators)."""
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n"
    )


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj)}")
