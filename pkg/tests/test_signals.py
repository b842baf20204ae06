"""Spectral engine tests.

Covers the transform pair (round trip, Parseval, analytic single-bin
inversion), the averaged cross/power spectral densities, linear coherence
(exact identities, Monte-Carlo bounds for independent signals, the
SNR-to-coherence law) and the two-noisy-copies signal PSD estimator.
"""

import numpy as np
import pytest

from nlcoherence.signals import (
    SpectralCurve,
    SpectrumFrame,
    TimeFrame,
    controlled_inputs_psd,
    cross_spectral_density,
    fft,
    ifft,
    linear_coherence,
    power_spectral_density,
)


def _random_frames(rng, n_frames, m, dt=0.01):
    return [TimeFrame(rng.standard_normal(m), dt) for _ in range(n_frames)]


# ---------------------------------------------------------------------------
# fft / ifft


def test_impulse_has_flat_spectrum():
    samples = np.zeros(8)
    samples[0] = 1.0
    spec = fft(TimeFrame(samples, dt=0.5))
    assert np.allclose(spec.bins, np.ones(8))


def test_constant_frame_is_pure_dc():
    spec = fft(TimeFrame(np.full(16, 3.25), dt=1.0))
    assert spec.bins[0] == pytest.approx(16 * 3.25)
    assert np.max(np.abs(spec.bins[1:])) < 1e-12


def test_parseval_against_direct_summation():
    # Forward transform is unscaled, so sum|x|^2 == sum|X|^2 / M.
    rng = np.random.default_rng(7)
    x = rng.standard_normal(64)
    spec = fft(TimeFrame(x, dt=0.125))
    time_energy = float(np.sum(x**2))
    spectral_energy = float(np.sum(np.abs(spec.bins) ** 2)) / 64
    assert abs(time_energy - spectral_energy) <= 1e-10 * time_energy


@pytest.mark.parametrize("m", [64, 255, 6000])
def test_round_trip_random_real_frame(m):
    rng = np.random.default_rng(m)
    x = rng.standard_normal(m)
    frame = TimeFrame(x, dt=0.002)
    back = ifft(fft(frame))
    assert np.max(np.abs(back.samples - x)) < 1e-10
    assert back.dt == pytest.approx(frame.dt)


def test_ifft_zero_spectrum():
    out = ifft(SpectrumFrame(np.zeros(32, dtype=complex), df=1.0))
    assert np.all(out.samples == 0.0)


def test_ifft_single_bin_pair_is_sampled_cosine():
    m, k, amp = 48, 5, 2.5
    bins = np.zeros(m, dtype=complex)
    bins[k] = amp
    bins[m - k] = amp
    out = ifft(SpectrumFrame(bins, df=0.25))
    t = np.arange(m)
    expected = (2 * amp / m) * np.cos(2 * np.pi * k * t / m)
    assert np.max(np.abs(out.samples - expected)) < 1e-12


def test_ifft_rejects_asymmetric_spectrum_when_real_required():
    bins = np.zeros(16, dtype=complex)
    bins[3] = 1.0 + 0.5j  # no conjugate partner
    with pytest.raises(ValueError, match="conjugate symmetric"):
        ifft(SpectrumFrame(bins, df=1.0))
    out = ifft(SpectrumFrame(bins, df=1.0), require_real=False)
    assert out.n_samples == 16


def test_empty_and_short_frames_rejected():
    with pytest.raises(ValueError):
        fft(TimeFrame(np.array([1.0]), dt=1.0))
    with pytest.raises(ValueError):
        fft(TimeFrame(np.array([]), dt=1.0))


# ---------------------------------------------------------------------------
# cross spectral density


def test_auto_spectrum_real_nonnegative():
    rng = np.random.default_rng(0)
    frames = [fft(fr) for fr in _random_frames(rng, 8, 64)]
    curve = cross_spectral_density(frames, frames)
    assert np.max(np.abs(curve.values.imag)) < 1e-12
    assert np.min(curve.values.real) >= 0.0


def test_csd_linearity_in_second_argument():
    rng = np.random.default_rng(1)
    a = [fft(fr) for fr in _random_frames(rng, 4, 32)]
    b = [SpectrumFrame(2.0 * fr.bins, fr.df) for fr in a]
    s_ab = cross_spectral_density(a, b)
    s_aa = cross_spectral_density(a, a)
    assert np.allclose(s_ab.values, 2.0 * s_aa.values)


def test_csd_hermitian_symmetry():
    rng = np.random.default_rng(2)
    a = [fft(fr) for fr in _random_frames(rng, 6, 40)]
    b = [fft(fr) for fr in _random_frames(rng, 6, 40)]
    s_ab = cross_spectral_density(a, b)
    s_ba = cross_spectral_density(b, a)
    assert np.allclose(s_ab.values, np.conj(s_ba.values))


def test_csd_independent_noise_is_small():
    # Sampling error of the normalized cross spectrum scales like
    # 1/sqrt(n_frames); 0.15 is a ~4.7 sigma bound at 1000 frames.
    rng = np.random.default_rng(3)
    n, m = 1000, 64
    a = [fft(fr) for fr in _random_frames(rng, n, m)]
    b = [fft(fr) for fr in _random_frames(rng, n, m)]
    s_ab = cross_spectral_density(a, b)
    s_aa = power_spectral_density(a)
    s_bb = power_spectral_density(b)
    ratio = np.abs(s_ab.values) / np.sqrt(s_aa.values * s_bb.values)
    assert np.max(ratio) < 0.15


def test_csd_mismatched_inputs_rejected():
    rng = np.random.default_rng(4)
    a = [fft(fr) for fr in _random_frames(rng, 3, 32)]
    b = [fft(fr) for fr in _random_frames(rng, 2, 32)]
    with pytest.raises(ValueError, match="frame count"):
        cross_spectral_density(a, b)
    c = [fft(fr) for fr in _random_frames(rng, 3, 16)]
    with pytest.raises(ValueError):
        cross_spectral_density(a, c)


# ---------------------------------------------------------------------------
# linear coherence


def test_coherence_of_signal_with_itself_is_one():
    rng = np.random.default_rng(5)
    a = [fft(fr) for fr in _random_frames(rng, 10, 64)]
    coh = linear_coherence(a, a)
    assert np.allclose(coh.values, 1.0)


def test_coherence_of_independent_signals_near_zero():
    rng = np.random.default_rng(6)
    a = [fft(fr) for fr in _random_frames(rng, 1000, 32)]
    b = [fft(fr) for fr in _random_frames(rng, 1000, 32)]
    coh = linear_coherence(a, b)
    assert np.max(coh.values) < 0.05


def test_coherence_snr_one_to_one_is_half():
    # With additive independent noise, coherence = SNR / (1 + SNR) per bin.
    rng = np.random.default_rng(8)
    n, m = 500, 64
    coh_sum = np.zeros(m)
    sig = _random_frames(rng, n, m)
    noisy = [
        TimeFrame(fr.samples + rng.standard_normal(m), fr.dt) for fr in sig
    ]
    coh = linear_coherence([fft(f) for f in sig], [fft(f) for f in noisy])
    coh_sum += coh.values
    assert np.all(np.abs(coh.values - 0.5) < 0.1)


def test_coherence_scale_invariance():
    rng = np.random.default_rng(9)
    sig = _random_frames(rng, 12, 48)
    other = [
        TimeFrame(fr.samples + 0.5 * rng.standard_normal(48), fr.dt)
        for fr in sig
    ]
    a = [fft(f) for f in sig]
    b = [fft(f) for f in other]
    a_scaled = [SpectrumFrame(3.7e4 * fr.bins, fr.df) for fr in a]
    b_scaled = [SpectrumFrame(-2.1e-3 * fr.bins, fr.df) for fr in b]
    base = linear_coherence(a, b).values
    scaled = linear_coherence(a_scaled, b_scaled).values
    assert np.max(np.abs(base - scaled)) < 1e-12


def test_coherence_guard_returns_zero_on_dead_bins():
    # Band-limit both signals; out-of-band bins are exactly zero.
    rng = np.random.default_rng(10)
    m = 64
    frames = []
    for _ in range(6):
        half = np.zeros(m // 2 + 1, dtype=complex)
        half[3:9] = np.exp(2j * np.pi * rng.random(6))
        frames.append(TimeFrame(np.fft.irfft(half, n=m), dt=0.1))
    a = [fft(f) for f in frames]
    coh = linear_coherence(a, a)
    assert np.allclose(coh.values[3:9], 1.0)
    assert np.all(coh.values[12:30] == 0.0)


def test_coherence_single_frame_policy():
    rng = np.random.default_rng(11)
    a = [fft(_random_frames(rng, 1, 32)[0])]
    with pytest.raises(ValueError, match="single frame"):
        linear_coherence(a, a)
    with pytest.warns(UserWarning):
        coh = linear_coherence(a, a, allow_single_frame=True)
    assert np.allclose(coh.values, 1.0)


# ---------------------------------------------------------------------------
# controlled-inputs estimator


def _bandlimited_frame(rng, m, lo, hi, scale=1.0):
    half = np.zeros(m // 2 + 1, dtype=complex)
    half[lo:hi] = scale * np.exp(2j * np.pi * rng.random(hi - lo))
    return TimeFrame(np.fft.irfft(half, n=m), dt=1.0)


def test_controlled_inputs_zero_noise_exact():
    rng = np.random.default_rng(12)
    frames = [_bandlimited_frame(rng, 64, 4, 12) for _ in range(20)]
    spectra = [fft(f) for f in frames]
    est = controlled_inputs_psd(spectra, spectra)
    true = power_spectral_density(spectra)
    assert np.allclose(est.values, true.values)


def test_controlled_inputs_independent_noise_recovers_signal_psd():
    # Two copies with independent noise at per-bin SNR 1:1; the averaged
    # cross spectrum converges on the clean PSD at ~1/sqrt(n) rate.
    rng = np.random.default_rng(13)
    n, m, lo, hi = 1000, 64, 4, 12
    sig, na, nb = [], [], []
    for _ in range(n):
        y = _bandlimited_frame(rng, m, lo, hi)
        e1 = _bandlimited_frame(rng, m, lo, hi)
        e2 = _bandlimited_frame(rng, m, lo, hi)
        sig.append(fft(y))
        na.append(fft(TimeFrame(y.samples + e1.samples, y.dt)))
        nb.append(fft(TimeFrame(y.samples + e2.samples, y.dt)))
    est = controlled_inputs_psd(na, nb)
    true = power_spectral_density(sig)
    band = slice(lo, hi)
    rel = np.abs(est.values[band] - true.values[band]) / true.values[band]
    assert np.max(rel) < 0.10


def test_controlled_inputs_correlated_noise_overestimates():
    # Identical noise on both copies documents the independence assumption:
    # the estimate is biased up by exactly the noise PSD.
    rng = np.random.default_rng(14)
    n, m, lo, hi = 200, 64, 4, 12
    sig, noisy = [], []
    noise = []
    for _ in range(n):
        y = _bandlimited_frame(rng, m, lo, hi)
        e = _bandlimited_frame(rng, m, lo, hi)
        sig.append(fft(y))
        noise.append(fft(e))
        noisy.append(fft(TimeFrame(y.samples + e.samples, y.dt)))
    est = controlled_inputs_psd(noisy, noisy)
    s_yy = power_spectral_density(sig).values
    s_ee = power_spectral_density(noise).values
    band = slice(lo, hi)
    # Cross terms average out; remaining bias is +S_ee.
    rel = np.abs(est.values[band] - (s_yy + s_ee)[band]) / (s_yy + s_ee)[band]
    assert np.max(rel) < 0.25
    assert np.all(est.values[band] > s_yy[band])


def test_controlled_inputs_misaligned_counts_rejected():
    rng = np.random.default_rng(15)
    a = [fft(f) for f in _random_frames(rng, 3, 32)]
    b = [fft(f) for f in _random_frames(rng, 4, 32)]
    with pytest.raises(ValueError, match="index-aligned"):
        controlled_inputs_psd(a, b)


def test_spectral_curve_frequency_grid():
    curve = SpectralCurve(np.arange(5.0), df=0.5)
    assert np.allclose(curve.frequencies, [0.0, 0.5, 1.0, 1.5, 2.0])
