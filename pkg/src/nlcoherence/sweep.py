"""Loss-mix schedule and stopping rule.

The blend curve and the reverse map are trained jointly while the mixing
weight ``lambda`` between the input-prediction loss and the measurement-
fidelity loss is stepped upward.  After a long run at the initial value,
each subsequent value trains for a fixed number of epochs; the input-
prediction loss on the validation split, averaged over each step's
epochs, is monitored, and the first step whose average rises more than a
threshold above the running minimum stops the sweep.  The previous step's
mixing weight, blend curve and network snapshot are returned.  If no step
ever crosses, a fixed high fallback value is used (the low-noise regime,
where pulling the blend toward the measurement never hurts).

Parameters carry over between steps (warm starts), so the schedule is a
strict sequential chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from nlcoherence.blend import BlendCurve, BlendObjective, frame_normalizers
from nlcoherence.dataio import write_curve_csv
from nlcoherence.nn import Adam, Conv1dNet, TrainingDivergedError, default_reverse_net
from nlcoherence.simulate import FramedDataset

__all__ = [
    "SweepConfig",
    "SweepStep",
    "SweepResult",
    "default_lambda_schedule",
    "select_lambda",
    "run_sweep",
    "emit_lambda_plot_data",
]


def default_lambda_schedule(n=20, ratio_lo=0.01, ratio_hi=100.0) -> tuple:
    """Mixing weights spaced logarithmically in the ratio lam/(1-lam)."""
    ratios = np.logspace(np.log10(ratio_lo), np.log10(ratio_hi), n)
    return tuple(float(r / (1.0 + r)) for r in ratios)


@dataclass(frozen=True)
class SweepConfig:
    initial_lambda: float = 0.001
    initial_epochs: int = 2000
    step_epochs: int = 100
    avg_window: int = 100
    threshold: float = 0.01
    fallback_lambda: float = 0.99
    lambdas: tuple = field(default_factory=default_lambda_schedule)
    lr: float = 0.01
    n_control: int = 50

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if not self.lambdas:
            raise ValueError("schedule must contain at least one value")
        seq = (self.initial_lambda,) + tuple(self.lambdas)
        for a, b in zip(seq, seq[1:]):
            if not (0.0 < a < b < 1.0):
                raise ValueError(
                    "schedule values must be strictly increasing inside (0, 1)"
                )
        if self.initial_epochs < 1 or self.step_epochs < 1:
            raise ValueError("epoch counts must be positive")
        if self.n_control < 2:
            raise ValueError("need at least 2 blend control points")


@dataclass
class SweepStep:
    """One completed schedule step."""

    lam: float
    ratio: float
    avg_val_loss_x: float
    train_loss_x: float
    train_loss_y: float
    k_raw: np.ndarray
    k_half: np.ndarray
    net_params: list[np.ndarray]


@dataclass
class SweepResult:
    chosen_lambda: float
    curve: BlendCurve
    net: Conv1dNet
    trace: list[SweepStep]
    crossed: bool
    crossing_index: int | None
    chosen_index: int | None


def select_lambda(avg_losses, lambdas, threshold, fallback):
    """Apply the stopping rule to a finished (or partial) trace.

    Returns ``(chosen_lambda, chosen_index, crossing_index)`` where
    ``chosen_index`` is None when no step crossed and the fallback value
    applies.  The running minimum includes every completed step before the
    candidate.
    """
    avg_losses = list(avg_losses)
    lambdas = list(lambdas)
    if len(avg_losses) != len(lambdas):
        raise ValueError("one averaged loss per schedule value required")
    running_min = np.inf
    for j, loss in enumerate(avg_losses):
        if j > 0 and loss > running_min + threshold:
            return lambdas[j - 1], j - 1, j
        running_min = min(running_min, loss)
    return fallback, None, None


def run_sweep(
    ds: FramedDataset,
    config: SweepConfig | None = None,
    seed: int = 0,
    net: Conv1dNet | None = None,
) -> SweepResult:
    """Train the blend curve and reverse map across the schedule.

    Batch size is one frame, reshuffled each epoch from a seeded stream;
    the validation input-prediction loss is evaluated every epoch, and
    each step's record averages it over that step's final epochs.
    Snapshots taken at every step make "return the previous step" exact
    rather than retrained.
    """
    if config is None:
        config = SweepConfig()
    if ds.y_n is None:
        raise ValueError("dataset has no measured response y_n")
    if ds.n_val < 1:
        raise ValueError("sweep needs a validation split")

    avail = np.concatenate([ds.train_indices, ds.val_indices])
    sigma_x2, sigma_y2 = frame_normalizers(ds.x, ds.y_n, avail)
    if net is None:
        net = default_reverse_net(
            seed=seed,
            in_scale=float(np.sqrt(np.mean(ds.y_n[avail] ** 2))),
            out_scale=float(np.sqrt(np.mean(ds.x[avail] ** 2))),
        )
    curve = BlendCurve(np.zeros(config.n_control), ds.n_samples)
    objective = BlendObjective(
        ds.x, ds.y_n, ds.y_z, net, curve, sigma_x2, sigma_y2
    )
    adam = Adam(
        net.params + [curve.raw],
        lr=config.lr,
        names=net.param_names + ["blend.raw"],
    )
    rng = np.random.default_rng(np.random.SeedSequence((seed, 5)))

    all_lambdas = [config.initial_lambda] + list(config.lambdas)
    all_epochs = [config.initial_epochs] + [config.step_epochs] * len(
        config.lambdas
    )
    train_idx = ds.train_indices
    val_idx = ds.val_indices

    trace: list[SweepStep] = []
    crossing_index = None
    for step_idx, (lam, n_epochs) in enumerate(zip(all_lambdas, all_epochs)):
        val_history = []
        for epoch in range(n_epochs):
            for i in rng.permutation(train_idx):
                terms, param_grads, raw_grad = objective.frame_loss_and_grads(
                    lam, int(i)
                )
                if not np.isfinite(terms.total):
                    raise TrainingDivergedError(
                        f"loss became non-finite at schedule step {step_idx}, "
                        f"epoch {epoch}"
                    )
                adam.step(param_grads + [raw_grad])
            val_history.append(objective.loss_x_only(val_idx))
        window = min(config.avg_window, len(val_history))
        avg_val = float(np.mean(val_history[-window:]))
        train_terms = objective.loss(lam, train_idx)
        trace.append(
            SweepStep(
                lam=lam,
                ratio=lam / (1.0 - lam),
                avg_val_loss_x=avg_val,
                train_loss_x=train_terms.loss_x,
                train_loss_y=train_terms.loss_y,
                k_raw=curve.raw.copy(),
                k_half=curve.evaluate_half(),
                net_params=[p.copy() for p in net.params],
            )
        )
        prior = [s.avg_val_loss_x for s in trace[:-1]]
        if prior and avg_val > min(prior) + config.threshold:
            crossing_index = step_idx
            break

    if crossing_index is not None:
        chosen_index = crossing_index - 1
        chosen = trace[chosen_index]
        chosen_lambda = chosen.lam
        for p, snap in zip(net.params, chosen.net_params):
            p[...] = snap
        curve.raw[...] = chosen.k_raw
        crossed = True
    else:
        chosen_index = None
        chosen_lambda = config.fallback_lambda
        crossed = False

    return SweepResult(
        chosen_lambda=chosen_lambda,
        curve=curve,
        net=net,
        trace=trace,
        crossed=crossed,
        crossing_index=crossing_index,
        chosen_index=chosen_index,
    )


def emit_lambda_plot_data(trace, crossing_index=None, path=None):
    """Tabular schedule trace: ratio, averaged validation loss, marker.

    The marker row flags the step at which the averaged validation loss
    crossed the stopping threshold.  Returns (header, columns); writes CSV
    when ``path`` is given.
    """
    if not trace:
        raise ValueError("empty sweep trace")
    header = ["lambda_ratio", "avg_val_loss_x", "is_crossing"]
    ratios = np.array([s.ratio for s in trace])
    losses = np.array([s.avg_val_loss_x for s in trace])
    marker = np.zeros(len(trace))
    if crossing_index is not None:
        marker[crossing_index] = 1.0
    columns = [ratios, losses, marker]
    if path is not None:
        write_curve_csv(path, header, columns)
    return header, columns
