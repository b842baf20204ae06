"""Dataset directory format.

One dataset is a directory holding ``manifest.json`` plus one flat binary
file per signal (little-endian float64, frame-major).  Binary round trips
are bit-exact; CSV sidecars use full round-trip precision.  Externally
recorded data uses the same layout with whatever signals are available
(typically just ``x`` and ``y_n`` and no ground truth).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from nlcoherence.simulate import FramedDataset, NoiseSpec, OscillatorSpec

__all__ = [
    "DataError",
    "save_dataset",
    "load_dataset",
    "write_curve_csv",
    "read_curve_csv",
]

FORMAT_VERSION = 1
_SIGNALS = ("x", "y", "y_n", "y_z")
TRUE_COHERENCE_FILE = "true_coherence.csv"


class DataError(RuntimeError):
    """Dataset directory is missing, incomplete or inconsistent."""


def write_curve_csv(path, header: list[str], columns: list[np.ndarray]):
    """Write aligned columns as CSV at full float round-trip precision."""
    n = len(columns[0])
    for col in columns:
        if len(col) != n:
            raise ValueError("CSV columns must have equal length")
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(n):
            fh.write(",".join(repr(float(col[i])) for col in columns) + "\n")


def read_curve_csv(path) -> tuple[list[str], np.ndarray]:
    """Read a CSV written by :func:`write_curve_csv`; returns (header, cols)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return header, data.T


def _oscillator_to_json(spec: OscillatorSpec) -> dict:
    return {
        "kind": spec.kind,
        "zeta": spec.zeta,
        "alpha1": spec.alpha1,
        "alpha2": spec.alpha2,
        "alpha3": spec.alpha3,
        "tau": spec.tau,
        "dt": spec.dt,
        "band": [spec.band[0], spec.band[1]],
    }


def _oscillator_from_json(obj: dict) -> OscillatorSpec:
    return OscillatorSpec(
        kind=obj["kind"],
        zeta=obj["zeta"],
        alpha1=obj["alpha1"],
        alpha2=obj["alpha2"],
        alpha3=obj["alpha3"],
        tau=obj["tau"],
        dt=obj["dt"],
        band=(obj["band"][0], obj["band"][1]),
    )


def _noise_to_json(noise: NoiseSpec) -> dict:
    level = noise.level
    if isinstance(level, np.ndarray):
        level = level.tolist()
    return {
        "level": level,
        "band": list(noise.band) if noise.band is not None else None,
        "seed": noise.seed,
    }


def _noise_from_json(obj: dict) -> NoiseSpec:
    level = obj["level"]
    if isinstance(level, list):
        level = np.asarray(level, dtype=np.float64)
    band = tuple(obj["band"]) if obj["band"] is not None else None
    return NoiseSpec(level=level, band=band, seed=obj["seed"])


def save_dataset(ds: FramedDataset, path) -> Path:
    """Write a dataset directory; returns its path."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    signals = [s for s in _SIGNALS if getattr(ds, s) is not None]
    for name in signals:
        arr = np.ascontiguousarray(getattr(ds, name), dtype="<f8")
        arr.tofile(path / f"{name}.f64")
    manifest = {
        "format_version": FORMAT_VERSION,
        "n_frames": ds.n_frames,
        "m": ds.n_samples,
        "dt": ds.dt,
        "split_boundaries": [ds.n_train, ds.n_train + ds.n_val],
        "seed": ds.seed,
        "lead_in": ds.lead_in,
        "signals": signals,
        "oscillator": (
            _oscillator_to_json(ds.oscillator) if ds.oscillator else None
        ),
        "noise": _noise_to_json(ds.noise) if ds.noise else None,
        "true_coherence_file": (
            TRUE_COHERENCE_FILE if ds.true_coherence is not None else None
        ),
        "extra": ds.extra,
    }
    with open(path / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if ds.true_coherence is not None:
        freqs = np.fft.rfftfreq(ds.n_samples, ds.dt)
        write_curve_csv(
            path / TRUE_COHERENCE_FILE,
            ["frequency", "coherence"],
            [freqs, ds.true_coherence],
        )
    return path


def load_dataset(path) -> FramedDataset:
    """Load a dataset directory written by :func:`save_dataset`."""
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"no manifest.json in {path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataError(
            f"unsupported dataset format version {manifest.get('format_version')}"
        )
    n, m = manifest["n_frames"], manifest["m"]
    arrays = {}
    for name in manifest["signals"]:
        fpath = path / f"{name}.f64"
        if not fpath.exists():
            raise DataError(f"manifest lists signal {name!r} but {fpath} is missing")
        raw = np.fromfile(fpath, dtype="<f8")
        if raw.size != n * m:
            raise DataError(
                f"{fpath} holds {raw.size} values, expected {n}x{m}"
            )
        arrays[name] = raw.reshape(n, m)
    if "x" not in arrays:
        raise DataError("dataset has no excitation signal x")
    b0, b1 = manifest["split_boundaries"]
    true_coherence = None
    if manifest.get("true_coherence_file"):
        _, cols = read_curve_csv(path / manifest["true_coherence_file"])
        true_coherence = cols[1]
    return FramedDataset(
        x=arrays["x"],
        y=arrays.get("y"),
        y_n=arrays.get("y_n"),
        y_z=arrays.get("y_z"),
        dt=manifest["dt"],
        n_train=b0,
        n_val=b1 - b0,
        oscillator=(
            _oscillator_from_json(manifest["oscillator"])
            if manifest.get("oscillator")
            else None
        ),
        noise=(
            _noise_from_json(manifest["noise"]) if manifest.get("noise") else None
        ),
        seed=manifest.get("seed"),
        lead_in=manifest.get("lead_in", 0),
        true_coherence=true_coherence,
        extra=manifest.get("extra", {}),
    )
