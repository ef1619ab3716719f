"""Command-line pipelines tying the analysis modules together.

Every run takes a JSON config, writes its outputs into --out and drops a
manifest.json recording the command, input digests, parameters, tool version
and output list. Outputs are deterministic for identical inputs and seed;
the timestamp lives only in the manifest. Exit codes: 0 success, 1 analysis
failure (non-convergence and friends), 2 usage or schema errors.
"""
import argparse
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import defect_model, g2_processing, photodynamics, psb, spin_hamiltonian
from .datasets import (
    DatasetDescriptor,
    EmissionSpectrum,
    ingest,
    sha256_of,
    write_json,
    write_table,
)
from .errors import DefectKitError, InvalidParameterError, SchemaError

PIPELINES = {}


def _pipeline(name):
    def register(fn):
        PIPELINES[name] = fn
        return fn
    return register


def _cfg(config, key, default=KeyError):
    if key in config:
        return config[key]
    if default is KeyError:
        raise SchemaError(f"config missing required key {key!r}")
    return default


def _zfs_from_config(config, key="init"):
    spec = _cfg(config, key, {}) if key else config
    axes = spec.get("axes")
    return spin_hamiltonian.ZfsParams(
        D=float(_cfg(spec, "D")),
        E=float(_cfg(spec, "E")),
        g=float(spec.get("g", 2.0)),
        axes=np.asarray(axes, dtype=float) if axes is not None else np.eye(3),
    )


def _angle_grid(spec):
    if isinstance(spec, list):
        return np.asarray(spec, dtype=float)
    return np.linspace(
        float(_cfg(spec, "start")), float(_cfg(spec, "stop")), int(_cfg(spec, "num"))
    )


@_pipeline("odmr-sim")
def run_odmr_sim(config, outdir, seed, inputs):
    p = _zfs_from_config(config, key=None)
    outputs = []
    lines = spin_hamiltonian.zero_field_lines(p)
    write_table(
        outdir / "zero_field_lines.txt",
        [lines.frequencies],
        ["freq_MHz"],
    )
    outputs.append("zero_field_lines.txt")
    sweep_cfg = config.get("sweep")
    if sweep_cfg:
        angles = _angle_grid(_cfg(sweep_cfg, "angles_deg"))
        orientations = sweep_cfg.get("orientations", "single")
        if orientations == "110-family":
            triads = spin_hamiltonian.orientation_family()
        elif orientations == "single":
            triads = [p.axes]
        else:
            triads = [np.asarray(t, dtype=float) for t in orientations]
        table = spin_hamiltonian.angular_sweep(
            p,
            magnitude=float(_cfg(sweep_cfg, "magnitude_G")),
            plane_normal=np.asarray(sweep_cfg.get("plane_normal", [0, 0, 1]), float),
            angles_deg=angles,
            orientations=triads,
        )
        rows = np.array(list(table.rows()))
        write_table(
            outdir / "sweep.txt",
            [rows[:, 0], rows[:, 1], rows[:, 2], rows[:, 3], rows[:, 4]],
            ["orientation", "angle_deg", "f1_MHz", "f2_MHz", "f3_MHz"],
        )
        outputs.append("sweep.txt")
    return outputs


@_pipeline("odmr-fit")
def run_odmr_fit(config, outdir, seed, inputs):
    data_path = _cfg(config, "data")
    inputs.append(data_path)
    observed = ingest(DatasetDescriptor(path=data_path, kind="odmr_table"))
    result = spin_hamiltonian.fit_odmr(
        observed,
        init=_zfs_from_config(config, key="init"),
        magnitude=float(_cfg(config, "magnitude_G")),
        plane_normal=np.asarray(config.get("plane_normal", [0, 0, 1]), float),
        fit_orientation=bool(config.get("fit_orientation", False)),
        fit_tilt=bool(config.get("fit_tilt", False)),
    )
    errs = np.sqrt(np.clip(np.diag(result.covariance), 0.0, None))
    write_json(outdir / "odmr_fit.json", {
        "D_MHz": result.params.D,
        "E_MHz": result.params.E,
        "param_names": list(result.param_names),
        "param_sigma": errs.tolist(),
        "axes": result.params.axes.tolist(),
        "rms_MHz": result.rms_mhz,
        "n_iter": result.n_iter,
        "converged": result.converged,
    })
    write_table(
        outdir / "odmr_residuals.txt",
        [observed[:, 0], observed[:, 1], result.residuals],
        ["angle_deg", "freq_MHz", "residual_MHz"],
    )
    return ["odmr_fit.json", "odmr_residuals.txt"]


@_pipeline("g2-fit")
def run_g2_fit(config, outdir, seed, inputs):
    data_path = _cfg(config, "data")
    inputs.append(data_path)
    desc = DatasetDescriptor(path=data_path, kind="g2_histogram",
                             units=config.get("units"))
    if desc.sidecar_path().exists():
        inputs.append(str(desc.sidecar_path()))
    hist, rho = ingest(desc)
    rho = float(config.get("rho", rho))
    curve = g2_processing.background_correct(g2_processing.normalize(hist), rho)
    result = g2_processing.fit_g2(
        hist.bin_centers,
        curve,
        n_exp=int(config.get("n_exp", 4)),
        counts=hist.counts,
        rho=rho,
    )
    write_json(outdir / "g2_fit.json", {
        "alphas": result.fit.alphas.tolist(),
        "taus_ns": result.fit.taus.tolist(),
        "rho": result.fit.rho,
        "alpha_sigma": result.alpha_err.tolist(),
        "tau_sigma_ns": result.tau_err.tolist(),
        "residual_rms": result.residual_rms,
        "jacobian_condition": result.jacobian_condition,
    })
    return ["g2_fit.json"]


@_pipeline("rates-extract")
def run_rates_extract(config, outdir, seed, inputs):
    if "fit_file" in config:
        inputs.append(config["fit_file"])
        payload = json.loads(Path(config["fit_file"]).read_text())
    else:
        payload = _cfg(config, "fit")
    fit = g2_processing.G2Fit(
        alphas=np.asarray(_cfg(payload, "alphas"), float),
        taus=np.asarray(_cfg(payload, "taus_ns"), float),
        rho=float(payload.get("rho", 1.0)),
    )
    rates = photodynamics.extract_rates(
        fit,
        detected=float(_cfg(config, "detected_rate")),
        eta=float(_cfg(config, "eta")),
    )
    write_json(outdir / "rates.json", asdict(rates))
    return ["rates.json"]


@_pipeline("power-sweep")
def run_power_sweep(config, outdir, seed, inputs):
    base = photodynamics.RateParams(**_cfg(config, "rates"))
    powers = config.get("powers_w")
    if powers is None:
        spec = _cfg(config, "powers")
        powers = np.geomspace(float(_cfg(spec, "start")), float(_cfg(spec, "stop")),
                              int(_cfg(spec, "num")))
    points = photodynamics.power_sweep_model(
        base,
        sigma_cm2=float(_cfg(config, "sigma_cm2")),
        beta=float(config.get("beta", 0.0)),
        powers_w=np.asarray(powers, float),
        wavelength_nm=float(_cfg(config, "wavelength_nm")),
        focal_area_cm2=float(_cfg(config, "focal_area_cm2")),
        driven=config.get("driven", "plus"),
    )
    write_table(
        outdir / "power_sweep.txt",
        [[p.power_w for p in points], [p.k_ex for p in points],
         [p.k_isc for p in points], [p.fluorescence for p in points],
         [p.contrast for p in points]],
        ["power_W", "kex", "kisc", "counts", "contrast"],
    )
    return ["power_sweep.txt"]


def _zpl_from_config(config, spacing):
    spec = config.get("zpl", {"kind": "delta"})
    if spec.get("kind", "delta") == "delta":
        return psb.ZplShape.delta(spacing)
    if spec["kind"] == "gaussian":
        return psb.ZplShape.gaussian(spacing, float(_cfg(spec, "sigma_mev")))
    raise SchemaError("zpl kind must be delta or gaussian")


def _i1_from_config(config, inputs):
    spacing = float(config.get("spacing_mev", 0.25))
    cutoff = float(config.get("cutoff_mev", psb.DIAMOND_PHONON_CUTOFF_MEV))
    if "i1_file" in config:
        inputs.append(config["i1_file"])
        band = ingest(DatasetDescriptor(path=config["i1_file"], kind="dos_table",
                                        units={"spacing_mev": spacing}))
        return psb.smooth_and_taper(band, cutoff, smooth_bins=1), spacing, cutoff
    spec = _cfg(config, "i1")
    grid = psb.make_grid(0.0, cutoff, spacing)
    vals = np.zeros_like(grid)
    for g in _cfg(spec, "gaussians"):
        vals += float(g.get("weight", 1.0)) * np.exp(
            -0.5 * ((grid - float(_cfg(g, "center_mev"))) / float(_cfg(g, "sigma_mev"))) ** 2
        )
    ramp = np.clip(grid / (4 * spacing), 0, 1) * np.clip((cutoff - grid) / (4 * spacing), 0, 1)
    band = psb.SpectralBand(grid, vals * ramp).normalized()
    return psb.OnePhononBand(band, cutoff_mev=cutoff), spacing, cutoff


@_pipeline("psb-synth")
def run_psb_synth(config, outdir, seed, inputs):
    i1, spacing, cutoff = _i1_from_config(config, inputs)
    s = float(_cfg(config, "S"))
    zpl = _zpl_from_config(config, spacing)
    n_max = config.get("n_max") or psb.poisson_n_max(s)
    band = psb.synthesize_band(i1, s, zpl, n_max=n_max)
    write_table(outdir / "band.txt", [band.grid, band.values],
                ["energy_meV", "intensity"])
    write_json(outdir / "synth.json", {
        "S": s,
        "n_max": int(n_max),
        "truncation_bound": psb.poisson_truncation_bound(s, n_max),
        "norm": band.integral(),
        "zpl_weight": np.exp(-s),
    })
    return ["band.txt", "synth.json"]


@_pipeline("psb-deconvolve")
def run_psb_deconvolve(config, outdir, seed, inputs):
    spacing = float(config.get("spacing_mev", 0.25))
    cutoff = float(config.get("cutoff_mev", psb.DIAMOND_PHONON_CUTOFF_MEV))
    if "spectrum" in config:
        inputs.append(config["spectrum"])
        desc = DatasetDescriptor(path=config["spectrum"], kind="emission_spectrum",
                                 units=dict(config.get("units") or {},
                                            spacing_mev=spacing))
        if desc.sidecar_path().exists():
            inputs.append(str(desc.sidecar_path()))
        spectrum: EmissionSpectrum = ingest(desc)
        band = psb.bandshape_from_emission(spectrum.band, spectrum.zpl_mev)
    else:
        band_path = _cfg(config, "band")
        inputs.append(band_path)
        band = ingest(DatasetDescriptor(path=band_path, kind="dos_table",
                                        units={"spacing_mev": spacing})).normalized()
    if "S" in config:
        s = float(config["S"])
    else:
        window = _cfg(config, "zpl_window_mev")
        s = psb.estimate_huang_rhys(band, (float(window[0]), float(window[1])))
    zpl = _zpl_from_config(config, band.spacing)
    init = psb.direct_fourier_deconvolve(band, s, zpl, cutoff_mev=cutoff)
    smoothed = psb.smooth_and_taper(
        init.band, cutoff,
        smooth_bins=int(config.get("smooth_bins", 5)),
        taper_fraction=float(config.get("taper_fraction", 0.1)),
    )
    i1, trace = psb.iterative_deconvolve(
        band, s, zpl, smoothed,
        max_iter=int(config.get("max_iter", 50)),
        tol=float(config.get("tol", 1e-6)),
    )
    write_table(outdir / "one_phonon_band.txt", [i1.grid, i1.values],
                ["energy_meV", "density"])
    write_json(outdir / "convergence.json", {
        "S": s,
        "converged": trace.converged,
        "n_iter": trace.n_iter,
        "step_l2": trace.step_l2,
        "resynthesis_l2": trace.resync_l2,
    })
    outputs = ["one_phonon_band.txt", "convergence.json"]
    if "dos" in config:
        inputs.append(config["dos"])
        dos = ingest(DatasetDescriptor(path=config["dos"], kind="dos_table"))
        report = psb.critical_point_report(i1, dos)
        write_json(outdir / "critical_points.json", {
            "peaks": [asdict(p) for p in report.peaks],
            "above_cutoff_fraction": report.above_cutoff_fraction,
            "local_mode_flag": report.local_mode_flag,
        })
        write_table(outdir / "overlay.txt",
                    [report.overlay[:, 0], report.overlay[:, 1], report.overlay[:, 2]],
                    ["energy_meV", "one_phonon", "dos"])
        outputs += ["critical_points.json", "overlay.txt"]
    return outputs


@_pipeline("defect-classify")
def run_defect_classify(config, outdir, seed, inputs):
    group = defect_model.point_group(config.get("group", "C2v"))
    geo_cfg = config.get("geometry") or {}
    if "theta_deg" in geo_cfg:
        geom = defect_model.VacancyGeometry.with_polar_angle(
            float(geo_cfg["theta_deg"]), delta=float(geo_cfg.get("delta", 0.0))
        )
    else:
        geom = defect_model.VacancyGeometry.tetrahedral(
            delta=float(geo_cfg.get("delta", 0.0))
        )
    records = defect_model.classify_pairs(group, geom)
    constraints = config.get("constraints")
    selected = records
    if constraints is not None:
        selected = defect_model.candidate_filter(
            records,
            dipole_axes=constraints.get("dipole_axes"),
            spin_axes=constraints.get("spin_axes"),
            require_coalignment=bool(constraints.get("require_coalignment", False)),
        )
    structures = {
        str(n): [asdict(s) for s in defect_model.structure_shortlist(n)]
        for n in config.get("electron_counts", [4, 6])
    }

    def rec_payload(rec):
        return {
            "homo": rec.homo,
            "lumo": rec.lumo,
            "excited_irrep": rec.excited_irrep,
            "dipole_axis": rec.dipole_axis,
            "dipole_allowed": rec.dipole_allowed,
            "spin_major_axis": rec.spin_major_axis,
        }

    write_json(outdir / "classification.json", {
        "group": group.name,
        "pairs": [rec_payload(r) for r in records],
        "consistent_pairs": [rec_payload(r) for r in selected],
        "structures": structures,
    })
    lines = [
        f"point group: {group.name}",
        "",
        f"{'(HOMO, LUMO)':16s} {'irrep':6s} {'dipole':8s} {'spin axis':9s}",
    ]
    for r in records:
        dip = r.dipole_axis + ("" if r.dipole_allowed else " (forbidden)")
        lines.append(f"({r.homo}, {r.lumo})".ljust(16)
                     + f" {r.excited_irrep:6s} {dip:8s} {r.spin_major_axis:9s}")
    lines += ["", "consistent pairs: "
              + ", ".join(f"({r.homo}, {r.lumo})" for r in selected)]
    for n, entries in structures.items():
        lines.append(f"{n}-electron structures: "
                     + ", ".join(f"{e['label']} ({e['symmetry']})" for e in entries))
    (outdir / "classification.txt").write_text("\n".join(lines) + "\n")
    return ["classification.json", "classification.txt"]


def write_manifest(outdir, command, config, inputs, outputs, seed):
    manifest = {
        "command": command,
        "tool_version": __version__,
        "seed": seed,
        "parameters": config,
        "inputs": {str(p): sha256_of(p) for p in inputs},
        "outputs": sorted(outputs),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    write_json(Path(outdir) / "manifest.json", manifest)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="defectkit",
        description="Analysis pipelines for singlet-ground-state color centers",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="pipeline", required=True)
    for name in sorted(PIPELINES):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as err:
        print(f"defectkit: cannot read config: {err}", file=sys.stderr)
        return 2
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    inputs = [args.config]
    try:
        outputs = PIPELINES[args.pipeline](config, outdir, args.seed, inputs)
    except (SchemaError, InvalidParameterError) as err:
        # malformed configs and data are usage problems, not analysis ones
        print(f"defectkit: {args.pipeline}: {err}", file=sys.stderr)
        return 2
    except DefectKitError as err:
        print(f"defectkit: {args.pipeline}: {err}", file=sys.stderr)
        return 1
    write_manifest(outdir, args.pipeline, config, inputs, outputs, args.seed)
    return 0


if __name__ == "__main__":
    sys.exit(main())
