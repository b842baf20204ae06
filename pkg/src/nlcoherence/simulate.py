"""Ground-truth dataset generation for single-degree-of-freedom nonlinear
oscillators driven by bandlimited random excitation.

Each frame is an independent record: the excitation is synthesized in the
frequency domain (flat magnitude, random phase inside the band), the
oscillator is integrated with classical fourth-order Runge-Kutta from zero
initial conditions, and a lead-in of extra steps is discarded so the
retained samples are free of the startup transient.  The lead-in input is
the periodic extension of the stored frame, which keeps the stored
excitation exactly bandlimited.

Additive output noise is synthesized on an independent random stream with
a flat in-band spectrum; named levels are calibrated so the band-averaged
true coherence lands near a fixed target.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from nlcoherence.signals import TimeFrame, coherence_guard

__all__ = [
    "POLYNOMIAL_STIFFNESS",
    "SATURATING_STIFFNESS",
    "COULOMB_FRICTION",
    "OscillatorSpec",
    "NoiseSpec",
    "FramedDataset",
    "IntegrationDivergedError",
    "OSCILLATOR_PRESETS",
    "NOISE_COHERENCE_TARGETS",
    "bandlimited_noise",
    "rk4_step",
    "simulate_dataset",
    "add_output_noise",
    "linearized_response",
    "true_nonlinear_coherence",
]

POLYNOMIAL_STIFFNESS = "polynomial_stiffness"
SATURATING_STIFFNESS = "saturating_stiffness"
COULOMB_FRICTION = "coulomb_friction"

_KINDS = (POLYNOMIAL_STIFFNESS, SATURATING_STIFFNESS, COULOMB_FRICTION)

# Gain inside the tanh() of the saturating-stiffness and friction terms.
SATURATION_GAIN = 1.0e4

# Extra integration steps discarded before the retained samples.
DEFAULT_LEAD_IN = 1000

# Random-stream tags so input and noise realizations never collide.
_STREAM_INPUT = 0
_STREAM_NOISE = 1

# Band-averaged true-coherence targets for the named noise levels.
NOISE_COHERENCE_TARGETS = {"low": 0.9, "moderate": 0.6, "high": 0.3}


class IntegrationDivergedError(RuntimeError):
    """Raised when the oscillator state becomes non-finite."""

    def __init__(self, frame: int, step: int):
        self.frame = frame
        self.step = step
        super().__init__(
            f"integration diverged in frame {frame} at step {step}"
        )


@dataclass(frozen=True)
class OscillatorSpec:
    """Parameters of one simulated nonlinear oscillator.

    ``kind`` selects the equation of motion (all per unit mass):

    * polynomial_stiffness:  y'' + 2*zeta*y' + a1*y + a2*y^2 + a3*y^3 = x
    * saturating_stiffness:  y'' + 2*zeta*y' + a1*y + a2*tanh(g*y) = x
    * coulomb_friction:      y'' + a1*y + a2*tanh(g*y') = x   (no viscous term)

    with g the fixed saturation gain.  ``tau`` is the excitation rms and
    ``band`` the excitation band in cycles per unit time.
    """

    kind: str
    zeta: float
    alpha1: float
    alpha2: float
    alpha3: float
    tau: float
    dt: float
    band: tuple[float, float]

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown oscillator kind {self.kind!r}")
        if self.zeta < 0:
            raise ValueError("damping ratio must be >= 0")
        if self.tau <= 0:
            raise ValueError("excitation rms tau must be > 0")
        if self.dt <= 0:
            raise ValueError("integration step dt must be > 0")

    def acceleration(self, y, v, x):
        """Right-hand side y'' for the configured equation of motion."""
        if self.kind == POLYNOMIAL_STIFFNESS:
            return (
                x
                - 2.0 * self.zeta * v
                - self.alpha1 * y
                - self.alpha2 * y * y
                - self.alpha3 * y * y * y
            )
        if self.kind == SATURATING_STIFFNESS:
            return (
                x
                - 2.0 * self.zeta * v
                - self.alpha1 * y
                - self.alpha2 * np.tanh(SATURATION_GAIN * y)
            )
        return x - self.alpha1 * y - self.alpha2 * np.tanh(SATURATION_GAIN * v)


@dataclass(frozen=True)
class NoiseSpec:
    """Additive output-noise description.

    ``level`` is one of the named levels (``none``/``low``/``moderate``/
    ``high``), an explicit flat in-band spectral scale (float), or an
    explicit per-bin scale over the positive-frequency half grid (array).
    The spectral scale is in units of ``E[|FFT bin|^2]`` under the package's
    unscaled forward transform.  The noise stream is independent of the
    excitation stream.
    """

    level: object = "none"
    band: tuple[float, float] | None = None
    seed: int = 0


@dataclass
class FramedDataset:
    """Aligned excitation/response frames plus the split bookkeeping.

    Arrays are frame-major ``(n_frames, n_samples)``.  ``y`` is the
    noise-free ground truth (absent for externally recorded data), ``y_n``
    the noisy measurement and ``y_z`` a forward-model prediction once one
    has been trained.  The first ``n_train`` frames train, the next
    ``n_val`` validate, and the remainder is held out for reporting.
    """

    x: np.ndarray
    dt: float
    y: np.ndarray | None = None
    y_n: np.ndarray | None = None
    y_z: np.ndarray | None = None
    n_train: int = 10
    n_val: int = 10
    oscillator: OscillatorSpec | None = None
    noise: NoiseSpec | None = None
    seed: int | None = None
    lead_in: int = DEFAULT_LEAD_IN
    true_coherence: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim != 2:
            raise ValueError("x must be (n_frames, n_samples)")
        for name in ("y", "y_n", "y_z"):
            arr = getattr(self, name)
            if arr is not None and arr.shape != self.x.shape:
                raise ValueError(f"{name} shape {arr.shape} != x {self.x.shape}")
        if self.n_train + self.n_val > self.n_frames:
            raise ValueError(
                f"split needs {self.n_train}+{self.n_val} frames but the "
                f"dataset has only {self.n_frames}"
            )

    @property
    def n_frames(self) -> int:
        return self.x.shape[0]

    @property
    def n_samples(self) -> int:
        return self.x.shape[1]

    @property
    def train_indices(self) -> np.ndarray:
        return np.arange(0, self.n_train)

    @property
    def val_indices(self) -> np.ndarray:
        return np.arange(self.n_train, self.n_train + self.n_val)

    @property
    def test_indices(self) -> np.ndarray:
        return np.arange(self.n_train + self.n_val, self.n_frames)

    def frames(self, name: str) -> list[TimeFrame]:
        arr = getattr(self, name)
        if arr is None:
            raise ValueError(f"dataset has no {name!r} signal")
        return [TimeFrame(row, self.dt) for row in arr]


# ---------------------------------------------------------------------------
# Excitation synthesis


def _band_bins(band, m, dt):
    f_lo, f_hi = band
    nyquist = 0.5 / dt
    if not (0.0 < f_lo < f_hi < nyquist):
        raise ValueError(
            f"band {band} must satisfy 0 < f_lo < f_hi < Nyquist ({nyquist})"
        )
    freqs = np.fft.rfftfreq(m, dt)
    mask = (freqs >= f_lo) & (freqs <= f_hi)
    if not mask.any():
        raise ValueError(f"band {band} contains no frequency bins at M={m}")
    return mask


def _bandlimited_samples(rms, band, m, dt, rng) -> np.ndarray:
    if rms < 0:
        raise ValueError("rms must be >= 0")
    if rms == 0.0:
        _band_bins(band, m, dt)
        return np.zeros(m)
    mask = _band_bins(band, m, dt)
    half = np.zeros(m // 2 + 1, dtype=np.complex128)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=int(mask.sum()))
    half[mask] = np.exp(1j * phases)
    x = np.fft.irfft(half, n=m)
    x *= rms / np.sqrt(np.mean(x * x))
    return x


def bandlimited_noise(rms, band, m, dt, seed) -> TimeFrame:
    """Random frame with a flat spectrum inside ``band`` and zero outside.

    Every in-band bin carries equal magnitude and an independent uniform
    phase; the synthesized frame is rescaled so its time-domain rms equals
    ``rms`` exactly (to rounding).
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    return TimeFrame(_bandlimited_samples(rms, band, m, dt, rng), dt)


# ---------------------------------------------------------------------------
# Integration


def rk4_step(state, t, dt, spec: OscillatorSpec, x_interp: Callable):
    """One classical Runge-Kutta step of the first-order system
    ``(y, v)' = (v, acceleration(y, v, x(t)))``.

    ``x_interp`` must supply the excitation at ``t``, ``t + dt/2`` and
    ``t + dt``.  Works on scalars or on per-frame state vectors.
    """
    y, v = state
    x0 = x_interp(t)
    xm = x_interp(t + 0.5 * dt)
    x1 = x_interp(t + dt)

    k1y = v
    k1v = spec.acceleration(y, v, x0)
    k2y = v + 0.5 * dt * k1v
    k2v = spec.acceleration(y + 0.5 * dt * k1y, v + 0.5 * dt * k1v, xm)
    k3y = v + 0.5 * dt * k2v
    k3v = spec.acceleration(y + 0.5 * dt * k2y, v + 0.5 * dt * k2v, xm)
    k4y = v + dt * k3v
    k4v = spec.acceleration(y + dt * k3y, v + dt * k3v, x1)

    y_new = y + (dt / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
    v_new = v + (dt / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return y_new, v_new


def _integrate_frames(spec: OscillatorSpec, x_ext: np.ndarray, lead_in: int):
    """Integrate every frame in parallel over the extended input grid.

    ``x_ext`` is ``(n_frames, lead_in + m)``; midpoint excitation values
    are linear interpolations of adjacent samples (the input is bandlimited
    far below Nyquist, so interpolation error is below integrator error).
    Returns the retained responses ``(n_frames, m)``.
    """
    n, total = x_ext.shape
    m = total - lead_in
    dt = spec.dt
    y = np.zeros(n)
    v = np.zeros(n)
    out = np.empty((n, m))
    # Divergence is detected on the state itself; intermediate overflow in
    # the polynomial terms is expected on the way to +-inf.
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(total):
            if j >= lead_in:
                out[:, j - lead_in] = y
            if j == total - 1:
                break
            y, v = _rk4_inline(spec, y, v, x_ext, j, dt)
            if not (np.isfinite(y).all() and np.isfinite(v).all()):
                bad = np.flatnonzero(~(np.isfinite(y) & np.isfinite(v)))
                raise IntegrationDivergedError(frame=int(bad[0]), step=j + 1)
    return out


def _rk4_inline(spec, y, v, x_ext, j, dt):
    # Hot path: identical math to rk4_step with the sample/midpoint gathers
    # resolved by index instead of a callable.
    x0 = x_ext[:, j]
    x1 = x_ext[:, j + 1]
    xm = 0.5 * (x0 + x1)
    k1y = v
    k1v = spec.acceleration(y, v, x0)
    k2y = v + 0.5 * dt * k1v
    k2v = spec.acceleration(y + 0.5 * dt * k1y, v + 0.5 * dt * k1v, xm)
    k3y = v + 0.5 * dt * k2v
    k3v = spec.acceleration(y + 0.5 * dt * k2y, v + 0.5 * dt * k2v, xm)
    k4y = v + dt * k3v
    k4v = spec.acceleration(y + dt * k3y, v + dt * k3v, x1)
    y_new = y + (dt / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
    v_new = v + (dt / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return y_new, v_new


def _extend_periodic(x: np.ndarray, lead_in: int) -> np.ndarray:
    """Prepend the periodic extension used for the transient lead-in."""
    if lead_in == 0:
        return x
    m = x.shape[1]
    idx = np.arange(-lead_in, m) % m
    return x[:, idx]


def simulate_dataset(
    spec: OscillatorSpec,
    n_frames: int,
    m: int,
    seed: int,
    n_train: int = 10,
    n_val: int = 10,
    lead_in: int = DEFAULT_LEAD_IN,
) -> FramedDataset:
    """Simulate ``n_frames`` independent excitation/response frames.

    Per-frame random streams are derived from ``(seed, frame_index)`` so
    the dataset is reproducible bit-for-bit regardless of evaluation
    order.  Raises :class:`IntegrationDivergedError` if any frame blows up.
    """
    if n_frames < n_train + n_val + 1:
        raise ValueError(
            f"need at least {n_train + n_val + 1} frames "
            f"({n_train} train + {n_val} validation + 1), got {n_frames}"
        )
    x = np.empty((n_frames, m))
    for i in range(n_frames):
        rng = np.random.default_rng(
            np.random.SeedSequence((seed, _STREAM_INPUT, i))
        )
        x[i] = _bandlimited_samples(spec.tau, spec.band, m, spec.dt, rng)
    y = _integrate_frames(spec, _extend_periodic(x, lead_in), lead_in)
    return FramedDataset(
        x=x,
        y=y,
        dt=spec.dt,
        n_train=n_train,
        n_val=n_val,
        oscillator=spec,
        seed=seed,
        lead_in=lead_in,
    )


# ---------------------------------------------------------------------------
# Output noise


def _signal_half_psd(y: np.ndarray) -> np.ndarray:
    """Mean |rfft|^2 over frames, computed in chunks to bound memory."""
    n = y.shape[0]
    acc = np.zeros(y.shape[1] // 2 + 1)
    for start in range(0, n, 128):
        spec = np.fft.rfft(y[start : start + 128], axis=1)
        acc += np.sum(spec.real**2 + spec.imag**2, axis=0)
    return acc / n


def _calibrate_noise_scale(s_yy_band: np.ndarray, target: float) -> float:
    """Flat in-band noise scale whose band-averaged coherence hits target.

    mean(s / (s + c)) is strictly decreasing in c, so bisection converges.
    """

    def band_coherence(c):
        return float(np.mean(s_yy_band / (s_yy_band + c)))

    lo = float(np.min(s_yy_band[s_yy_band > 0])) * 1e-9
    hi = float(np.max(s_yy_band)) * 1e9
    for _ in range(200):
        mid = np.sqrt(lo * hi)
        if band_coherence(mid) > target:
            lo = mid
        else:
            hi = mid
    return float(np.sqrt(lo * hi))


def true_nonlinear_coherence(
    y: np.ndarray, y_n: np.ndarray, indices: Sequence[int] | None = None
) -> np.ndarray:
    """Ground-truth coherence ``E[|Y|^2] / E[|Y_n|^2]`` on the half grid.

    Evaluated over the given frame indices (default: all frames).  Clipped
    to [0, 1]; bins where either PSD is numerically dead are set to 0.
    """
    if indices is not None:
        y = y[np.asarray(indices)]
        y_n = y_n[np.asarray(indices)]
    s_yy = _signal_half_psd(y)
    s_nn = _signal_half_psd(y_n)
    alive = coherence_guard(s_yy, s_nn)
    coh = np.zeros_like(s_yy)
    np.divide(s_yy, s_nn, out=coh, where=alive)
    return np.clip(coh, 0.0, 1.0)


def add_output_noise(ds: FramedDataset, noise: NoiseSpec) -> FramedDataset:
    """Return a copy of ``ds`` with ``y_n = y + noise`` and stored truth.

    The noise realization comes from a stream independent of the
    excitation stream.  The per-bin spectral scale is recorded in
    ``extra['noise_psd_scale']`` and the true coherence (evaluated on the
    test split, or all frames if the test split is empty) is stored in
    ``true_coherence``.
    """
    if ds.y is None:
        raise ValueError("dataset has no ground-truth response to add noise to")
    m = ds.n_samples
    band = noise.band if noise.band is not None else (
        ds.oscillator.band if ds.oscillator is not None else None
    )

    level = noise.level
    if isinstance(level, str) and level == "none":
        y_n = ds.y.copy()
        scale_desc = 0.0
        half_scale = None
    else:
        if band is None:
            raise ValueError("noise band is required for a non-trivial level")
        mask = _band_bins(band, m, ds.dt)
        if isinstance(level, str):
            if level not in NOISE_COHERENCE_TARGETS:
                raise ValueError(f"unknown noise level {level!r}")
            s_yy = _signal_half_psd(ds.y)
            scale_desc = _calibrate_noise_scale(
                s_yy[mask], NOISE_COHERENCE_TARGETS[level]
            )
            half_scale = np.where(mask, scale_desc, 0.0)
        elif np.ndim(level) == 0:
            scale_desc = float(level)
            half_scale = np.where(mask, scale_desc, 0.0)
        else:
            half_scale = np.asarray(level, dtype=np.float64)
            if half_scale.shape != (m // 2 + 1,):
                raise ValueError(
                    "per-bin noise scale must cover the positive-frequency "
                    f"half grid, expected shape {(m // 2 + 1,)}"
                )
            half_scale = np.where(mask, half_scale, 0.0)
            scale_desc = half_scale.copy()
        amp = np.sqrt(half_scale)
        y_n = np.empty_like(ds.y)
        for i in range(ds.n_frames):
            rng = np.random.default_rng(
                np.random.SeedSequence((noise.seed, _STREAM_NOISE, i))
            )
            phases = rng.uniform(0.0, 2.0 * np.pi, size=amp.shape[0])
            half = amp * np.exp(1j * phases)
            y_n[i] = ds.y[i] + np.fft.irfft(half, n=m)

    out = replace(ds)
    out.y_n = y_n
    out.noise = noise
    out.extra = dict(ds.extra)
    out.extra["noise_psd_scale"] = (
        scale_desc.tolist() if isinstance(scale_desc, np.ndarray) else scale_desc
    )
    idx = ds.test_indices if ds.test_indices.size else None
    out.true_coherence = true_nonlinear_coherence(ds.y, y_n, idx)
    return out


# ---------------------------------------------------------------------------
# Linearized benchmark


def linearized_response(ds: FramedDataset) -> tuple[np.ndarray, float]:
    """Best linear time-invariant fit of the response, and its capture.

    Fits a per-bin frequency response ``H(f) = S_xy(f) / S_xx(f)`` by least
    squares over all frames and predicts ``y_lin = irfft(H * rfft(x))``.
    This is the linearly explainable component of the response: for a
    linear system it reproduces the response exactly (frames are periodic
    steady states of their excitation), and for a physical dataset it needs
    no equations of motion.  The captured fraction is
    ``1 - sum||y - y_lin||^2 / sum||y||^2``.
    """
    if ds.y is None:
        raise ValueError("dataset has no ground-truth response")
    m = ds.n_samples
    spec_x = np.fft.rfft(ds.x, axis=1)
    spec_y = np.fft.rfft(ds.y, axis=1)
    s_xx = np.mean(spec_x.real**2 + spec_x.imag**2, axis=0)
    s_xy = np.mean(np.conj(spec_x) * spec_y, axis=0)
    alive = s_xx > 1e-12 * float(np.max(s_xx))
    frf = np.where(alive, s_xy / np.where(alive, s_xx, 1.0), 0.0)
    y_lin = np.fft.irfft(frf[None, :] * spec_x, n=m, axis=1)
    err = float(np.sum((ds.y - y_lin) ** 2))
    tot = float(np.sum(ds.y**2))
    return y_lin, 1.0 - err / tot


# ---------------------------------------------------------------------------
# Benchmark presets (bands chosen to bracket the operating range; recorded
# in every manifest)

OSCILLATOR_PRESETS: dict[str, OscillatorSpec] = {
    "poly": OscillatorSpec(
        kind=POLYNOMIAL_STIFFNESS,
        zeta=4.5,
        alpha1=5.0e3,
        alpha2=-10.0,
        alpha3=3.0e3,
        tau=1.0e3,
        dt=0.0025,
        band=(2.0, 50.0),
    ),
    "sat": OscillatorSpec(
        kind=SATURATING_STIFFNESS,
        zeta=3.0,
        alpha1=1.0e4,
        alpha2=5.0e3,
        alpha3=0.0,
        tau=6.0e3,
        dt=0.005,
        band=(2.0, 70.0),
    ),
    "friction": OscillatorSpec(
        kind=COULOMB_FRICTION,
        zeta=0.0,
        alpha1=1.0e5,
        alpha2=0.5,
        alpha3=0.0,
        tau=5.0,
        dt=0.002,
        band=(10.0, 230.0),
    ),
}
