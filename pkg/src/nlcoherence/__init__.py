"""Estimate the causal, input-attributable fraction of a measured output
spectrum for single-degree-of-freedom nonlinear systems under additive
output noise.

The estimator learns a per-frequency blend of a noisy measurement and an
imperfect forward-model prediction while training a small convolutional
network that maps the blended output back to the input; the learned blend
weights are then converted into a frequency-resolved coherence estimate.
"""

from nlcoherence.blend import (
    BlendCurve,
    BlendLossTerms,
    blend_spectra,
    composite_loss,
    composite_loss_grads,
    optimal_blend_weight,
)
from nlcoherence.coherence import (
    CoherenceReport,
    build_report,
    error_psd_ratio,
    estimate_signal_psd,
    lower_bound_coherence,
    nonlinear_coherence,
)
from nlcoherence.dataio import DataError, load_dataset, save_dataset
from nlcoherence.nn import (
    Adam,
    Conv1dNet,
    ForwardModelConfig,
    TrainingDivergedError,
    default_forward_net,
    default_reverse_net,
    train_forward_model,
)
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
from nlcoherence.simulate import (
    FramedDataset,
    IntegrationDivergedError,
    NoiseSpec,
    OSCILLATOR_PRESETS,
    OscillatorSpec,
    add_output_noise,
    bandlimited_noise,
    linearized_response,
    rk4_step,
    simulate_dataset,
)
from nlcoherence.sweep import (
    SweepConfig,
    SweepResult,
    default_lambda_schedule,
    run_sweep,
    select_lambda,
)

__version__ = "0.1.0"

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
    "OscillatorSpec",
    "NoiseSpec",
    "FramedDataset",
    "OSCILLATOR_PRESETS",
    "IntegrationDivergedError",
    "bandlimited_noise",
    "rk4_step",
    "simulate_dataset",
    "add_output_noise",
    "linearized_response",
    "Conv1dNet",
    "Adam",
    "ForwardModelConfig",
    "TrainingDivergedError",
    "default_reverse_net",
    "default_forward_net",
    "train_forward_model",
    "BlendCurve",
    "BlendLossTerms",
    "blend_spectra",
    "composite_loss",
    "composite_loss_grads",
    "optimal_blend_weight",
    "CoherenceReport",
    "build_report",
    "error_psd_ratio",
    "estimate_signal_psd",
    "nonlinear_coherence",
    "lower_bound_coherence",
    "SweepConfig",
    "SweepResult",
    "default_lambda_schedule",
    "run_sweep",
    "select_lambda",
    "DataError",
    "load_dataset",
    "save_dataset",
    "__version__",
]
