"""Learnable per-frequency blend of measurement and model prediction.

The blend weight curve is parameterized by a small number of raw control
values at uniformly spaced frequencies: raw values are linearly
interpolated onto the positive-frequency half grid, squashed through a
sigmoid into (0, 1), and mirrored so the blended spectrum stays conjugate
symmetric.  One curve is shared by all frames.

The composite objective jointly scores the reverse map and the curve:

    L = (1 - lam) * L_x + lam * L_y
    L_x = sum_i ||net(yhat_i) - x_i||^2 / sigma_x^2     (padding-free interior)
    L_y = sum_i ||yhat_i - y_n_i||^2 / sigma_y^2
    yhat_i = irfft( rfft(y_z_i) + K * (rfft(y_n_i) - rfft(y_z_i)) )

with sigma_x^2, sigma_y^2 the mean squared frame norms, fixed once per
dataset.  Gradients flow to the network parameters through the reverse map
and to the raw control values through the transform chain, whose adjoint
is applied in closed form (per bin, with the mirror fold counted once at
DC/Nyquist and twice elsewhere).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nlcoherence.nn import Conv1dNet, interior_slice
from nlcoherence.signals import SpectrumFrame

__all__ = [
    "BlendCurve",
    "BlendLossTerms",
    "blend_spectra",
    "optimal_blend_weight",
    "frame_normalizers",
    "BlendObjective",
    "composite_loss",
    "composite_loss_grads",
]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class BlendCurve:
    """Piecewise-linear-in-raw-space blend weight curve.

    ``raw`` holds ``n_control`` values at uniformly spaced points spanning
    the positive-frequency half grid of a length-``m`` spectrum.  The
    evaluated curve lies strictly inside (0, 1).
    """

    def __init__(self, raw: np.ndarray, m: int):
        raw = np.asarray(raw, dtype=np.float64)
        if raw.ndim != 1 or raw.size < 2:
            raise ValueError("need at least 2 control values")
        if m < 4:
            raise ValueError("spectrum length must be at least 4")
        self.raw = raw
        self.m = m
        n_half = m // 2 + 1
        pos = np.arange(n_half) * (raw.size - 1) / (n_half - 1)
        left = np.minimum(pos.astype(np.intp), raw.size - 2)
        self._left = left
        self._wright = pos - left
        # Mirror fold weights: interior half bins appear twice in the full
        # two-sided grid, DC (and Nyquist for even m) once.
        fold = np.full(n_half, 2.0)
        fold[0] = 1.0
        if m % 2 == 0:
            fold[-1] = 1.0
        self._fold = fold

    @property
    def n_control(self) -> int:
        return self.raw.size

    @property
    def n_half(self) -> int:
        return self.m // 2 + 1

    def control_frequencies(self, df: float) -> np.ndarray:
        n_half = self.n_half
        return np.linspace(0.0, (n_half - 1) * df, self.n_control)

    def raw_on_half(self) -> np.ndarray:
        return (1.0 - self._wright) * self.raw[self._left] + (
            self._wright * self.raw[self._left + 1]
        )

    def evaluate_half(self) -> np.ndarray:
        """Blend weights on the positive-frequency half grid."""
        return _sigmoid(self.raw_on_half())

    def evaluate(self) -> np.ndarray:
        """Blend weights on the full two-sided grid (conjugate symmetric)."""
        half = self.evaluate_half()
        out = np.empty(self.m)
        out[: self.n_half] = half
        tail = np.arange(self.n_half, self.m)
        out[tail] = half[self.m - tail]
        return out

    def raw_grad_from_half(self, g_half: np.ndarray) -> np.ndarray:
        """Adjoint of interpolate-then-sigmoid for a half-grid gradient.

        ``g_half`` is d(loss)/d(evaluated half-grid weights); returns
        d(loss)/d(raw control values).
        """
        k = self.evaluate_half()
        g_pre = g_half * k * (1.0 - k)
        g_raw = np.zeros_like(self.raw)
        np.add.at(g_raw, self._left, (1.0 - self._wright) * g_pre)
        np.add.at(g_raw, self._left + 1, self._wright * g_pre)
        return g_raw

    def copy(self) -> "BlendCurve":
        return BlendCurve(self.raw.copy(), self.m)


def blend_spectra(
    yn: SpectrumFrame, yz: SpectrumFrame, weights: np.ndarray
) -> SpectrumFrame:
    """Per-bin convex combination ``Yn * K + Yz * (1 - K)``."""
    if yn.n_bins != yz.n_bins or yn.n_bins != len(weights):
        raise ValueError(
            f"length mismatch: {yn.n_bins}, {yz.n_bins}, {len(weights)}"
        )
    return SpectrumFrame(
        bins=yn.bins * weights + yz.bins * (1.0 - weights), df=yn.df
    )


def optimal_blend_weight(
    noise_psd: np.ndarray, model_error_psd: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Minimum of the per-bin quadratic blend risk for known error levels.

    ``K^2 * S_noise + (1-K)^2 * S_model`` is minimized at
    ``K = S_model / (S_model + S_noise)``: trust the measurement where the
    model error dominates and the model where the noise dominates.  Bins
    where both levels vanish are indifferent; they get 0.5 and are flagged
    in the returned mask.
    """
    noise_psd = np.asarray(noise_psd, dtype=np.float64)
    model_error_psd = np.asarray(model_error_psd, dtype=np.float64)
    if noise_psd.shape != model_error_psd.shape:
        raise ValueError("error level curves must share one grid")
    if np.any(noise_psd < 0) or np.any(model_error_psd < 0):
        raise ValueError("error levels must be nonnegative")
    total = noise_psd + model_error_psd
    indeterminate = total == 0.0
    weights = np.where(
        indeterminate, 0.5, model_error_psd / np.where(indeterminate, 1.0, total)
    )
    return weights, indeterminate


def frame_normalizers(
    x: np.ndarray, y_n: np.ndarray, indices=None
) -> tuple[float, float]:
    """Mean squared frame norms used to normalize the two loss terms."""
    if indices is not None:
        idx = np.asarray(indices)
        x = x[idx]
        y_n = y_n[idx]
    sigma_x2 = float(np.mean(np.sum(x**2, axis=1)))
    sigma_y2 = float(np.mean(np.sum(y_n**2, axis=1)))
    if sigma_x2 <= 0 or sigma_y2 <= 0:
        raise ValueError("loss normalizers must be positive")
    return sigma_x2, sigma_y2


@dataclass(frozen=True)
class BlendLossTerms:
    """The two loss terms of one evaluation plus their fixed normalizers."""

    loss_x: float
    loss_y: float
    lam: float
    sigma_x2: float
    sigma_y2: float

    @property
    def total(self) -> float:
        return (1.0 - self.lam) * self.loss_x + self.lam * self.loss_y


class BlendObjective:
    """Composite loss and gradients over a fixed set of frames.

    Per-frame transforms of the measurement and prediction never change
    during training, so they are computed once up front; only the blend
    and the reverse map are evaluated per pass.
    """

    def __init__(self, x, y_n, y_z, net: Conv1dNet, curve: BlendCurve,
                 sigma_x2: float, sigma_y2: float):
        if y_z is None:
            raise ValueError(
                "no forward-model prediction available: run forward "
                "modeling first"
            )
        self.x = x
        self.y_n = y_n
        self.m = x.shape[1]
        if curve.m != self.m:
            raise ValueError(
                f"blend curve built for length {curve.m}, frames have {self.m}"
            )
        self.net = net
        self.curve = curve
        self.sigma_x2 = sigma_x2
        self.sigma_y2 = sigma_y2
        self.spec_n = np.fft.rfft(y_n, axis=1)
        self.spec_z = np.fft.rfft(y_z, axis=1)
        self.spec_diff = self.spec_n - self.spec_z
        self.interior = interior_slice(self.m, net.receptive_field)

    def blended_frame(self, i: int, half_weights: np.ndarray) -> np.ndarray:
        spec = self.spec_n[i] * half_weights + self.spec_z[i] * (
            1.0 - half_weights
        )
        return np.fft.irfft(spec, n=self.m)

    def loss(self, lam: float, indices) -> BlendLossTerms:
        half = self.curve.evaluate_half()
        loss_x = 0.0
        loss_y = 0.0
        for i in indices:
            yhat = self.blended_frame(i, half)
            xhat = self.net.forward(yhat)
            r_x = xhat[self.interior] - self.x[i][self.interior]
            loss_x += float(np.sum(r_x**2)) / self.sigma_x2
            r_y = yhat - self.y_n[i]
            loss_y += float(np.sum(r_y**2)) / self.sigma_y2
        return BlendLossTerms(loss_x, loss_y, lam, self.sigma_x2, self.sigma_y2)

    def loss_x_only(self, indices) -> float:
        """Input-prediction loss alone (used on the validation split)."""
        half = self.curve.evaluate_half()
        loss_x = 0.0
        for i in indices:
            yhat = self.blended_frame(i, half)
            xhat = self.net.forward(yhat)
            r_x = xhat[self.interior] - self.x[i][self.interior]
            loss_x += float(np.sum(r_x**2)) / self.sigma_x2
        return loss_x

    def frame_loss_and_grads(self, lam: float, i: int):
        """Loss terms plus gradients for one frame.

        Returns ``(terms, param_grads, raw_grad)`` where ``param_grads``
        aligns with ``net.params`` and ``raw_grad`` with ``curve.raw``.
        """
        half = self.curve.evaluate_half()
        yhat = self.blended_frame(i, half)
        xhat, caches = self.net.forward_cached(yhat)
        r_x = np.zeros(self.m)
        r_x[self.interior] = xhat[self.interior] - self.x[i][self.interior]
        r_y = yhat - self.y_n[i]
        terms = BlendLossTerms(
            float(np.sum(r_x**2)) / self.sigma_x2,
            float(np.sum(r_y**2)) / self.sigma_y2,
            lam,
            self.sigma_x2,
            self.sigma_y2,
        )
        g_xhat = (2.0 * (1.0 - lam) / self.sigma_x2) * r_x
        param_grads, g_yhat = self.net.backward(caches, g_xhat)
        g_yhat = g_yhat + (2.0 * lam / self.sigma_y2) * r_y
        # Adjoint of irfft(spec_z + K * diff) w.r.t. the half-grid weights:
        # fold the full-grid bin gradient Re[conj(fft(g)) * diff] / m onto
        # the half grid (factor 2 on mirrored bins, 1 at DC/Nyquist).
        g_spec = np.fft.rfft(g_yhat)
        g_half = self.curve._fold * (
            np.real(np.conj(g_spec) * self.spec_diff[i]) / self.m
        )
        raw_grad = self.curve.raw_grad_from_half(g_half)
        return terms, param_grads, raw_grad

    def loss_and_grads(self, lam: float, indices):
        """Summed loss terms and gradients over a set of frames."""
        total_x = total_y = 0.0
        param_grads = [np.zeros_like(p) for p in self.net.params]
        raw_grad = np.zeros_like(self.curve.raw)
        for i in indices:
            terms, pg, rg = self.frame_loss_and_grads(lam, i)
            total_x += terms.loss_x
            total_y += terms.loss_y
            for acc, g in zip(param_grads, pg):
                acc += g
            raw_grad += rg
        terms = BlendLossTerms(
            total_x, total_y, lam, self.sigma_x2, self.sigma_y2
        )
        return terms, param_grads, raw_grad


def _objective(x, y_n, y_z, net, curve, sigma_x2=None, sigma_y2=None):
    if sigma_x2 is None or sigma_y2 is None:
        sigma_x2, sigma_y2 = frame_normalizers(x, y_n)
    return BlendObjective(x, y_n, y_z, net, curve, sigma_x2, sigma_y2)


def composite_loss(x, y_n, y_z, net, curve, lam,
                   sigma_x2=None, sigma_y2=None) -> BlendLossTerms:
    """One-shot composite loss over all given frames."""
    obj = _objective(x, y_n, y_z, net, curve, sigma_x2, sigma_y2)
    return obj.loss(lam, range(x.shape[0]))


def composite_loss_grads(x, y_n, y_z, net, curve, lam,
                         sigma_x2=None, sigma_y2=None):
    """One-shot loss and gradients over all given frames."""
    obj = _objective(x, y_n, y_z, net, curve, sigma_x2, sigma_y2)
    return obj.loss_and_grads(lam, range(x.shape[0]))
