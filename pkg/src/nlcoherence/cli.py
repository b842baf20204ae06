"""Command-line surface.

Subcommands tie the pieces into reproducible runs:

* ``simulate``       benchmark dataset directory (oscillator + noise)
* ``train-forward``  fit the forward model, write predictions into the dataset
* ``sweep``          train blend + reverse map across the mixing schedule
* ``estimate``       end-to-end: forward modeling (if needed), sweep, report
* ``report``         re-emit figure CSVs and a text summary from a run

Exit codes: 0 success, 2 usage errors, 3 data errors, 4 numerical
divergence.  Every estimate run directory is self-contained: the persisted
flat key=value config plus the dataset reproduce it bit for bit.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from nlcoherence.blend import BlendCurve
from nlcoherence.coherence import build_report
from nlcoherence.dataio import (
    DataError,
    load_dataset,
    read_curve_csv,
    save_dataset,
    write_curve_csv,
)
from nlcoherence.nn import (
    FORWARD_MODEL_PRESETS,
    ForwardModelConfig,
    TrainingDivergedError,
    save_checkpoint,
    train_forward_model,
)
from nlcoherence.simulate import (
    IntegrationDivergedError,
    NoiseSpec,
    OSCILLATOR_PRESETS,
    add_output_noise,
    linearized_response,
    simulate_dataset,
)
from nlcoherence.sweep import (
    SweepConfig,
    default_lambda_schedule,
    emit_lambda_plot_data,
    run_sweep,
)

__all__ = ["main", "RunConfig"]

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_PRESET_BY_KIND = {spec.kind: name for name, spec in OSCILLATOR_PRESETS.items()}


@dataclass
class RunConfig:
    """Everything needed to reproduce one estimate run."""

    data_dir: str
    out_dir: str
    seed: int
    forward_kernel: int
    forward_features: int
    forward_epochs: int
    forward_lr: float
    threshold: float
    initial_epochs: int
    step_epochs: int
    control_points: int
    sweep_lr: float
    schedule: str  # comma-joined mixing weights

    def to_text(self) -> str:
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            lines.append(f"{f.name}={getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        values = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
        kwargs = {}
        for f in fields(cls):
            if f.name not in values:
                raise DataError(f"run config is missing key {f.name!r}")
            kwargs[f.name] = _coerce(f.type, values[f.name])
        return cls(**kwargs)


def _coerce(typ, raw: str):
    if typ in ("int", int):
        return int(raw)
    if typ in ("float", float):
        return float(raw)
    return raw


def _parse_schedule(arg: str) -> tuple:
    if arg == "default":
        return default_lambda_schedule()
    path = Path(arg)
    if not path.exists():
        raise DataError(f"schedule file {arg} does not exist")
    values = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            values.append(float(line))
    if not values:
        raise DataError(f"schedule file {arg} contains no values")
    return tuple(values)


def _resolve_forward_config(ds, args) -> ForwardModelConfig:
    preset = None
    if ds.oscillator is not None:
        preset = FORWARD_MODEL_PRESETS.get(_PRESET_BY_KIND[ds.oscillator.kind])
    kernel = args.kernel if args.kernel is not None else (
        preset.kernel if preset else None
    )
    features = args.features if args.features is not None else (
        preset.features if preset else None
    )
    epochs = args.epochs if args.epochs is not None else (
        preset.epochs if preset else None
    )
    if kernel is None or features is None or epochs is None:
        raise DataError(
            "dataset has no benchmark preset: pass --kernel, --features "
            "and --epochs explicitly"
        )
    return ForwardModelConfig(
        kernel=kernel, features=features, epochs=epochs, lr=args.forward_lr
    )


def _sweep_config(args, schedule) -> SweepConfig:
    return SweepConfig(
        initial_epochs=args.initial_epochs,
        step_epochs=args.step_epochs,
        avg_window=min(args.step_epochs, args.initial_epochs),
        threshold=args.threshold,
        lambdas=schedule,
        lr=args.sweep_lr,
        n_control=args.control_points,
    )


def _write_json(path, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_sweep_artifacts(out: Path, result):
    steps = result.trace
    write_curve_csv(
        out / "sweep_trace.csv",
        ["step", "lambda", "lambda_ratio", "avg_val_loss_x",
         "train_loss_x", "train_loss_y"],
        [
            np.arange(len(steps), dtype=float),
            np.array([s.lam for s in steps]),
            np.array([s.ratio for s in steps]),
            np.array([s.avg_val_loss_x for s in steps]),
            np.array([s.train_loss_x for s in steps]),
            np.array([s.train_loss_y for s in steps]),
        ],
    )
    emit_lambda_plot_data(
        result.trace, result.crossing_index, path=out / "lambda_plot.csv"
    )


def _write_k_curve(out: Path, curve: BlendCurve, df: float):
    raw = curve.raw
    freqs = curve.control_frequencies(df)
    write_curve_csv(
        out / "k_curve.csv",
        ["frequency", "raw", "k"],
        [freqs, raw, 1.0 / (1.0 + np.exp(-raw))],
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    if args.system not in OSCILLATOR_PRESETS:
        raise ValueError(f"unknown system {args.system!r}")
    spec = OSCILLATOR_PRESETS[args.system]
    ds = simulate_dataset(spec, args.frames, args.m, seed=args.seed)
    noise_seed = args.noise_seed if args.noise_seed is not None else args.seed
    ds = add_output_noise(ds, NoiseSpec(level=args.noise, seed=noise_seed))
    ds.extra["system"] = args.system
    path = save_dataset(ds, args.out)
    print(f"wrote {ds.n_frames} frames of {ds.n_samples} samples to {path}")
    return EXIT_OK


def cmd_train_forward(args) -> int:
    ds = load_dataset(args.data)
    config = _resolve_forward_config(ds, args)
    result = train_forward_model(ds, config, seed=args.seed)
    ds.y_z = result.y_z
    ds.extra["forward_config"] = {
        "kernel": config.kernel,
        "features": config.features,
        "epochs": config.epochs,
        "lr": config.lr,
        "seed": args.seed,
    }
    if result.capture is not None:
        ds.extra["forward_capture"] = result.capture
    save_dataset(ds, args.data)
    save_checkpoint(Path(args.data) / "forward_model.ckpt", result.net)
    msg = f"forward model trained ({config.epochs} epochs)"
    if result.capture is not None:
        msg += f", capture {result.capture:.3f}"
    print(msg)
    return EXIT_OK


def cmd_sweep(args) -> int:
    ds = load_dataset(args.data)
    if ds.y_z is None:
        raise DataError(
            "dataset has no forward-model prediction: run train-forward first"
        )
    schedule = _parse_schedule(args.schedule)
    config = _sweep_config(args, schedule)
    result = run_sweep(ds, config, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_sweep_artifacts(out, result)
    _write_k_curve(out, result.curve, 1.0 / (ds.n_samples * ds.dt))
    save_checkpoint(out / "reverse_net.ckpt", result.net)
    _write_json(
        out / "chosen_lambda.json",
        {
            "chosen_lambda": result.chosen_lambda,
            "crossed": result.crossed,
            "crossing_index": result.crossing_index,
            "chosen_index": result.chosen_index,
        },
    )
    print(f"chosen lambda {result.chosen_lambda} (crossed={result.crossed})")
    return EXIT_OK


def cmd_estimate(args) -> int:
    ds = load_dataset(args.data)
    if ds.y_n is None:
        raise DataError("dataset has no measured response y_n")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if ds.y_z is None:
        config = _resolve_forward_config(ds, args)
        result = train_forward_model(ds, config, seed=args.seed)
        ds.y_z = result.y_z
        ds.extra["forward_config"] = {
            "kernel": config.kernel,
            "features": config.features,
            "epochs": config.epochs,
            "lr": config.lr,
            "seed": args.seed,
        }
        if result.capture is not None:
            ds.extra["forward_capture"] = result.capture
        save_dataset(ds, args.data)
        save_checkpoint(Path(args.data) / "forward_model.ckpt", result.net)

    schedule = _parse_schedule(args.schedule)
    sweep_cfg = _sweep_config(args, schedule)
    result = run_sweep(ds, sweep_cfg, seed=args.seed)

    report = build_report(
        ds, result.curve.evaluate_half(), chosen_lambda=result.chosen_lambda
    )
    report.to_csv(out / "coherence_report.csv")
    _write_sweep_artifacts(out, result)
    _write_k_curve(out, result.curve, 1.0 / (ds.n_samples * ds.dt))
    save_checkpoint(out / "reverse_net.ckpt", result.net)

    summary = report.band_summary()
    summary["crossed"] = result.crossed
    summary["crossing_index"] = result.crossing_index
    if "forward_capture" in ds.extra:
        summary["forward_capture"] = ds.extra["forward_capture"]
    if ds.y is not None:
        _, linear_capture = linearized_response(ds)
        summary["linear_capture"] = linear_capture
    _write_json(out / "summary.json", summary)

    fwd = ds.extra.get("forward_config", {})
    run_config = RunConfig(
        data_dir=str(args.data),
        out_dir=str(args.out),
        seed=args.seed,
        forward_kernel=fwd.get("kernel", args.kernel or -1),
        forward_features=fwd.get("features", args.features or -1),
        forward_epochs=fwd.get("epochs", args.epochs or -1),
        forward_lr=fwd.get("lr", args.forward_lr),
        threshold=args.threshold,
        initial_epochs=args.initial_epochs,
        step_epochs=args.step_epochs,
        control_points=args.control_points,
        sweep_lr=args.sweep_lr,
        schedule=",".join(repr(l) for l in schedule),
    )
    (out / "run_config.txt").write_text(run_config.to_text())

    mean_est = summary["band_mean_est"]
    line = f"chosen lambda {result.chosen_lambda}, band-mean coherence {mean_est:.3f}"
    if "band_mean_abs_error" in summary:
        line += f", band-mean |error| {summary['band_mean_abs_error']:.3f}"
    print(line)
    return EXIT_OK


_REPORT_INPUTS = (
    "coherence_report.csv",
    "sweep_trace.csv",
    "lambda_plot.csv",
    "k_curve.csv",
    "summary.json",
)


def cmd_report(args) -> int:
    run = Path(args.run)
    missing = [name for name in _REPORT_INPUTS if not (run / name).exists()]
    if missing:
        raise DataError(
            f"run directory {run} is incomplete: missing {', '.join(missing)}"
        )
    out = Path(args.out) if args.out else run
    out.mkdir(parents=True, exist_ok=True)

    header, cols = read_curve_csv(run / "coherence_report.csv")
    col = {name: cols[i] for i, name in enumerate(header)}
    band = col["in_band"] > 0.5
    fig_header = ["frequency", "gamma2_est", "lower_bound"]
    fig_cols = [col["frequency"][band], col["gamma2_est"][band],
                col["lower_bound"][band]]
    if "gamma2_true" in col:
        fig_header.append("gamma2_true")
        fig_cols.append(col["gamma2_true"][band])
    write_curve_csv(out / "report_coherence.csv", fig_header, fig_cols)

    lam_header, lam_cols = read_curve_csv(run / "lambda_plot.csv")
    write_curve_csv(out / "report_lambda.csv", lam_header, list(lam_cols))

    k_header, k_cols = read_curve_csv(run / "k_curve.csv")
    write_curve_csv(out / "report_k.csv", k_header, list(k_cols))

    with open(run / "summary.json") as fh:
        summary = json.load(fh)
    keys = sorted(k for k, v in summary.items() if isinstance(v, (int, float))
                  and v is not None and not isinstance(v, bool))
    with open(out / "report_summary.csv", "w") as fh:
        fh.write("metric,value\n")
        for key in keys:
            fh.write(f"{key},{repr(float(summary[key]))}\n")

    lines = ["run summary", "==========="]
    for key in keys:
        lines.append(f"{key}: {summary[key]:.3f}")
    if summary.get("chosen_lambda") is not None:
        lines.append(f"chosen_lambda: {summary['chosen_lambda']:.3f}")
    text = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_forward_args(p):
    p.add_argument("--kernel", type=int, default=None)
    p.add_argument("--features", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--forward-lr", type=float, default=0.01)


def _add_sweep_args(p):
    p.add_argument("--schedule", default="default",
                   help="'default' or a file with one mixing weight per line")
    p.add_argument("--threshold", type=float, default=0.01)
    p.add_argument("--initial-epochs", type=int, default=2000)
    p.add_argument("--step-epochs", type=int, default=100)
    p.add_argument("--control-points", type=int, default=50)
    p.add_argument("--sweep-lr", type=float, default=0.01)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nlcoherence",
        description=(
            "Estimate the input-attributable fraction of a measured output "
            "spectrum for noisy nonlinear single-degree-of-freedom systems."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a benchmark dataset")
    p.add_argument("--system", required=True,
                   choices=sorted(OSCILLATOR_PRESETS))
    p.add_argument("--preset", default="paper", choices=["paper"])
    p.add_argument("--frames", type=int, default=1000)
    p.add_argument("--m", type=int, default=6000)
    p.add_argument("--noise", default="none",
                   choices=["none", "low", "moderate", "high"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train-forward", help="fit the forward model")
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_forward_args(p)
    p.set_defaults(func=cmd_train_forward)

    p = sub.add_parser("sweep", help="train blend and reverse map")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_sweep_args(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("estimate", help="end-to-end coherence estimation")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_forward_args(p)
    _add_sweep_args(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("report", help="emit figure CSVs and a text summary")
    p.add_argument("--run", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (IntegrationDivergedError, TrainingDivergedError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
