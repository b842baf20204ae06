"""Frame-based spectral estimation: FFT frames, cross/power spectral
densities and linear coherence.

Conventions used throughout the package:

* A *frame* is one fixed-length record of ``M`` samples spaced ``dt`` apart.
* The forward transform is unscaled and the inverse carries the ``1/M``
  factor (the numpy convention).  Every downstream quantity is a ratio of
  spectral densities, so the convention only has to be consistent.
* Spectral densities are per-bin expectations ``S_AB(f) = E[A(f) conj(B(f))]``
  estimated by averaging over frames.  No taper is applied and frames do not
  overlap; each frame is treated as an independent record.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "TimeFrame",
    "SpectrumFrame",
    "SpectralCurve",
    "fft",
    "ifft",
    "cross_spectral_density",
    "power_spectral_density",
    "linear_coherence",
    "controlled_inputs_psd",
    "csd_array",
    "coherence_guard",
]

# Relative imaginary residue allowed when collapsing a conjugate-symmetric
# spectrum back to a real frame.
_REAL_RESIDUE_TOL = 1e-10

# Bins whose coherence denominator falls below this fraction of the largest
# denominator are reported as zero coherence (avoids 0/0 outside the band).
_COHERENCE_GUARD = 1e-12


@dataclass(frozen=True)
class TimeFrame:
    """One record of a sampled time series."""

    samples: np.ndarray
    dt: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1:
            raise ValueError("frame samples must be one-dimensional")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.samples**2)))


@dataclass(frozen=True)
class SpectrumFrame:
    """Complex spectrum of one frame on the full two-sided bin grid."""

    bins: np.ndarray
    df: float

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=np.complex128)
        object.__setattr__(self, "bins", bins)
        if bins.ndim != 1:
            raise ValueError("spectrum bins must be one-dimensional")
        if self.df <= 0:
            raise ValueError(f"df must be positive, got {self.df}")

    @property
    def n_bins(self) -> int:
        return self.bins.shape[0]


@dataclass(frozen=True)
class SpectralCurve:
    """A per-bin spectral quantity (CSD, PSD or coherence) on a bin grid.

    ``values`` is complex for cross spectra and real for power spectra and
    coherence curves.
    """

    values: np.ndarray
    df: float

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values))
        if self.values.ndim != 1:
            raise ValueError("curve values must be one-dimensional")

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(self.values.shape[0]) * self.df


def fft(frame: TimeFrame) -> SpectrumFrame:
    """Forward transform of one frame (unscaled, full two-sided grid)."""
    m = frame.n_samples
    if m < 2:
        raise ValueError(f"frame must contain at least 2 samples, got {m}")
    bins = np.fft.fft(frame.samples)
    return SpectrumFrame(bins=bins, df=1.0 / (m * frame.dt))


def ifft(spectrum: SpectrumFrame, require_real: bool = True) -> TimeFrame:
    """Inverse transform back to a time frame.

    With ``require_real`` (the default), the input must be conjugate
    symmetric: the imaginary residue after inversion is checked against a
    relative tolerance of 1e-10 and then discarded.  Pass
    ``require_real=False`` to skip the check and keep the real part anyway.
    """
    m = spectrum.n_bins
    if m < 2:
        raise ValueError(f"spectrum must contain at least 2 bins, got {m}")
    z = np.fft.ifft(spectrum.bins)
    if require_real:
        scale = max(float(np.max(np.abs(z.real))), 1.0)
        residue = float(np.max(np.abs(z.imag)))
        if residue > _REAL_RESIDUE_TOL * scale:
            raise ValueError(
                "spectrum is not conjugate symmetric: imaginary residue "
                f"{residue:.3e} exceeds {_REAL_RESIDUE_TOL:.0e} x {scale:.3e}"
            )
    dt = 1.0 / (m * spectrum.df)
    return TimeFrame(samples=z.real, dt=dt)


def _stack_spectra(frames: Sequence[SpectrumFrame]) -> tuple[np.ndarray, float]:
    if len(frames) == 0:
        raise ValueError("need at least one frame")
    m = frames[0].n_bins
    df = frames[0].df
    for i, fr in enumerate(frames):
        if fr.n_bins != m:
            raise ValueError(
                f"frame {i} has {fr.n_bins} bins, expected {m}: all frames "
                "of one dataset must share the same length"
            )
    return np.stack([fr.bins for fr in frames]), df


def csd_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-bin average of ``a * conj(b)`` over the frame axis (axis 0).

    Array-level workhorse behind :func:`cross_spectral_density`; used
    directly on batched rfft output in the estimation pipeline.  Summation
    order is fixed (numpy pairwise over axis 0), so results are
    reproducible bit-for-bit.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return np.mean(a * np.conj(b), axis=0)


def cross_spectral_density(
    a: Sequence[SpectrumFrame], b: Sequence[SpectrumFrame]
) -> SpectralCurve:
    """Cross spectral density ``S_AB(f) = E[A(f) conj(B(f))]``.

    Averages ``A_i(f) conj(B_i(f))`` over frames.  ``S_AB(f)`` is the
    Hermitian conjugate of ``S_BA(f)`` by construction.
    """
    if len(a) != len(b):
        raise ValueError(f"frame count mismatch: {len(a)} vs {len(b)}")
    sa, df = _stack_spectra(a)
    sb, _ = _stack_spectra(b)
    if sa.shape != sb.shape:
        raise ValueError(f"bin count mismatch: {sa.shape} vs {sb.shape}")
    return SpectralCurve(values=csd_array(sa, sb), df=df)


def power_spectral_density(a: Sequence[SpectrumFrame]) -> SpectralCurve:
    """Auto spectral density: real, nonnegative at every bin."""
    curve = cross_spectral_density(a, a)
    return SpectralCurve(values=np.maximum(curve.values.real, 0.0), df=curve.df)


def coherence_guard(saa: np.ndarray, sbb: np.ndarray) -> np.ndarray:
    """Mask of bins where the coherence denominator is numerically alive.

    The threshold scales with the largest per-signal PSD values, so the
    guard is invariant under global rescaling of either signal.
    """
    denom = saa * sbb
    cutoff = _COHERENCE_GUARD * float(np.max(saa)) * float(np.max(sbb))
    return denom > cutoff


def linear_coherence(
    a: Sequence[SpectrumFrame],
    b: Sequence[SpectrumFrame],
    allow_single_frame: bool = False,
) -> SpectralCurve:
    """Magnitude-squared coherence ``|S_AB|^2 / (S_AA S_BB)`` per bin.

    Coherence estimated from a single frame is identically 1 and carries no
    information, so fewer than 2 frames raises unless
    ``allow_single_frame=True`` (which warns instead).  Bins outside the
    guard of :func:`coherence_guard` are returned as 0.
    """
    if len(a) != len(b):
        raise ValueError(f"frame count mismatch: {len(a)} vs {len(b)}")
    if len(a) < 2:
        if not allow_single_frame:
            raise ValueError(
                "coherence from a single frame is identically 1; need >= 2 "
                "frames (or pass allow_single_frame=True)"
            )
        warnings.warn(
            "coherence estimated from a single frame is identically 1",
            stacklevel=2,
        )
    sa, df = _stack_spectra(a)
    sb, _ = _stack_spectra(b)
    if sa.shape != sb.shape:
        raise ValueError(f"bin count mismatch: {sa.shape} vs {sb.shape}")
    sab = csd_array(sa, sb)
    saa = np.maximum(csd_array(sa, sa).real, 0.0)
    sbb = np.maximum(csd_array(sb, sb).real, 0.0)
    alive = coherence_guard(saa, sbb)
    coh = np.zeros_like(saa)
    np.divide(np.abs(sab) ** 2, saa * sbb, out=coh, where=alive)
    return SpectralCurve(values=np.clip(coh, 0.0, 1.0), df=df)


def controlled_inputs_psd(
    yn: Sequence[SpectrumFrame], ym: Sequence[SpectrumFrame]
) -> SpectralCurve:
    """Signal PSD from two noisy copies of the same underlying response.

    With frames index-aligned (same underlying realization per index) and
    the two noise contaminations mutually independent and independent of
    the signal, the real part of the averaged cross spectrum estimates the
    clean signal PSD.  Correlated noise on the two copies biases the
    estimate upward by the common noise PSD.
    """
    if len(yn) != len(ym):
        raise ValueError(
            f"copies must be index-aligned: {len(yn)} vs {len(ym)} frames"
        )
    curve = cross_spectral_density(yn, ym)
    return SpectralCurve(values=curve.values.real.copy(), df=curve.df)
