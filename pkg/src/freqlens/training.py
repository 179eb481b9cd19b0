"""Loss terms, optimizer, schedules, and the deterministic training loop.

The objective combines the forecast error with three regularizers:
a log-barrier on consecutive log-frequency gaps (keeps learned
frequencies from collapsing onto each other), the hidden-space
reconstruction error (keeps the bases spanning the signal), and an L1
penalty on the selection weights.  Fixed-prior models swap the gap
barrier for an orthogonality penalty on per-frequency features, since
their frequencies cannot move.

Training is bit-reproducible for a given seed: batch order, selection
noise, and initialization all derive from it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Iterable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward
from .model import ForwardOutput, FreqLens

__all__ = [
    "LossWeights",
    "TrainConfig",
    "EpochRecord",
    "TrainLog",
    "diversity_loss",
    "orthogonality_loss",
    "total_loss",
    "Adam",
    "schedules",
    "evaluate_mse",
    "train",
]


@dataclass
class LossWeights:
    lambda_div: float = 0.01
    lambda_recon: float = 0.1
    lambda_sparse: float = 0.01
    lambda_variance: float = 0.1  # accepted for config compatibility; attaches to no loss term
    epsilon_div: float = 1e-6

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"{name} must be nonnegative, got {value}")


@dataclass
class TrainConfig:
    epochs: int = 50
    base_lr: float = 1e-3
    freq_lr_multiplier: float = 5.0
    batch_size: int = 32
    patience: int = 10
    tau_start: float = 1.0
    tau_end: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    loss_pred: float
    loss_div: float
    loss_recon: float
    loss_sparse: float
    loss_total: float
    val_mse: float
    tau: float
    lr: float
    frequencies: list[float]


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def to_jsonl(self) -> str:
        import json

        return "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in self.records)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def load(cls, path) -> "TrainLog":
        import json

        records = []
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    records.append(EpochRecord(**json.loads(line)))
        return cls(records)


# ---------------------------------------------------------------------------
# loss terms
# ---------------------------------------------------------------------------

def diversity_loss(freqs: Tensor, epsilon: float = 1e-6) -> Tensor:
    """Log-barrier on consecutive gaps in sorted log-frequency space.

    -(1/(N-1)) * sum_j ln(ln f_(j+1) - ln f_(j) + eps).  Working on log
    frequencies makes the penalty ratio-invariant: pairs (0.01, 0.02)
    and (0.1, 0.2) are penalized identically.  Duplicates give a finite
    barrier of -ln(eps).
    """
    if freqs.size < 2:
        raise ValueError("diversity loss needs at least two frequencies")
    if np.any(freqs.data <= 0):
        raise ValueError("diversity loss needs positive frequencies")
    sorted_f, _ = ad.sort_ascending(freqs)
    logs = ad.log(sorted_f)
    gaps = logs[1:] - logs[:-1]
    shifted = gaps + epsilon
    if np.any(shifted.data <= 0):
        raise ValueError("nonpositive gap after epsilon shift")
    return -ad.log(shifted).mean()


def orthogonality_loss(features: Tensor) -> Tensor:
    """Mean squared deviation of the row-similarity matrix from identity.

    Rows are l2-normalized (with a 1e-8 floor); mutually orthogonal rows
    give exactly zero.
    """
    norms = ad.clip_min(ad.sqrt(ad.square(features).sum(axis=1, keepdims=True)), 1e-8)
    unit = features / norms
    gram = ad.matmul(unit, ad.transpose(unit))
    eye = Tensor(np.eye(features.shape[0]))
    return ad.square(gram - eye).mean()


def total_loss(output: ForwardOutput, target: np.ndarray, freqs: Tensor,
               weights: LossWeights, freq_mode: str = "learnable") -> tuple[Tensor, dict[str, float]]:
    """Prediction MSE plus diversity/orthogonality, reconstruction, and sparsity.

    Fixed-prior mode replaces the frequency-gap barrier with the
    orthogonality penalty on batch-averaged per-frequency coefficients.
    Returns the scalar loss and its components as plain floats.
    """
    pred = ad.square(output.y_hat - Tensor(np.asarray(target, dtype=np.float64))).mean()
    if freq_mode == "fixed-prior":
        reg = orthogonality_loss(output.coefficients.mean(axis=0))
    elif freqs.size >= 2:
        reg = diversity_loss(freqs, weights.epsilon_div)
    else:
        reg = Tensor(0.0)  # a single frequency has no gaps to keep apart
    sparse = ad.absolute(output.soft_weights).sum(axis=1).mean()
    recon = output.recon_error
    total = (
        pred
        + weights.lambda_div * reg
        + weights.lambda_recon * recon
        + weights.lambda_sparse * sparse
    )
    components = {
        "pred": float(pred.data),
        "div": float(reg.data),
        "recon": float(recon.data),
        "sparse": float(sparse.data),
        "total": float(total.data),
    }
    return total, components


# ---------------------------------------------------------------------------
# optimizer and schedules
# ---------------------------------------------------------------------------

class Adam:
    """Adam with a differential learning rate for the frequency parameters.

    The frequency group (bank raw parameters and phases) steps with
    ``freq_lr_multiplier`` times the current learning rate; missing
    gradients count as zero.
    """

    def __init__(self, named_params: Iterable[tuple[str, Tensor]],
                 freq_param_names: frozenset[str] = frozenset(),
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 freq_lr_multiplier: float = 5.0):
        self.params = list(named_params)
        self.freq_param_names = freq_param_names
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.freq_lr_multiplier = freq_lr_multiplier
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self, grads: dict[int, Tensor], lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params:
            g = grads.get(p.node_id)
            g = np.zeros_like(p.data) if g is None else g.data
            if not np.all(np.isfinite(g)):
                raise ValueError(f"non-finite gradient for parameter {name!r}")
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            step_lr = lr * self.freq_lr_multiplier if name in self.freq_param_names else lr
            p.data = p.data - step_lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def schedules(epoch: int, total_epochs: int, config: TrainConfig) -> tuple[float, float]:
    """Cosine-annealed learning rate and linearly annealed temperature."""
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    if total_epochs == 1:
        return config.base_lr, config.tau_start
    frac = epoch / (total_epochs - 1)
    lr = config.base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))
    tau = config.tau_start + (config.tau_end - config.tau_start) * frac
    return lr, tau


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def evaluate_mse(model: FreqLens, dataset, tau: float, batch_size: int = 256) -> float:
    """Mean squared forecast error over a window set, in evaluation mode."""
    inputs, targets = dataset[0], dataset[1]
    total = 0.0
    count = 0
    for start in range(0, inputs.shape[0], batch_size):
        x = inputs[start : start + batch_size]
        y = targets[start : start + batch_size]
        out = model.forward(x, tau=tau, training=False)
        total += float(((out.y_hat.data - y) ** 2).sum())
        count += y.size
    return total / count


def train(model: FreqLens, train_data, val_data, config: TrainConfig,
          weights: LossWeights | None = None) -> tuple[FreqLens, TrainLog]:
    """Optimize the model, early-stopping on validation MSE.

    Keeps the best-validation snapshot and restores it before
    returning; stops after ``patience`` consecutive epochs without
    improvement.  A non-finite loss aborts with a diagnostic of the
    epoch, batch, and loss components.
    """
    weights = LossWeights() if weights is None else weights
    x_train, y_train = np.asarray(train_data[0]), np.asarray(train_data[1])
    x_val, y_val = np.asarray(val_data[0]), np.asarray(val_data[1])
    if x_train.shape[0] == 0 or x_val.shape[0] == 0:
        raise ValueError("train and validation sets must be nonempty")

    shuffle_rng, gumbel_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(2)
    )
    optimizer = Adam(
        model.trainable_parameters(),
        freq_param_names=FreqLens.frequency_parameter_names(),
        betas=(config.beta1, config.beta2),
        eps=config.adam_eps,
        freq_lr_multiplier=config.freq_lr_multiplier,
    )

    log = TrainLog()
    best_mse = math.inf
    best_state = model.state_dict()
    bad_epochs = 0
    n = x_train.shape[0]

    for epoch in range(config.epochs):
        lr, tau = schedules(epoch, config.epochs, config)
        order = shuffle_rng.permutation(n)
        sums = {"pred": 0.0, "div": 0.0, "recon": 0.0, "sparse": 0.0, "total": 0.0}
        n_batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            out = model.forward(x_train[idx], tau=tau, training=True, rng=gumbel_rng)
            loss, comps = total_loss(out, y_train[idx], out.frequencies, weights, model.config.freq_mode)
            if not math.isfinite(comps["total"]):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch {n_batches}: {comps}"
                )
            grads = backward(loss)
            optimizer.step(grads, lr)
            for key in sums:
                sums[key] += comps[key]
            n_batches += 1

        val_mse = evaluate_mse(model, (x_val, y_val), tau=tau, batch_size=config.batch_size)
        log.records.append(
            EpochRecord(
                epoch=epoch,
                loss_pred=sums["pred"] / n_batches,
                loss_div=sums["div"] / n_batches,
                loss_recon=sums["recon"] / n_batches,
                loss_sparse=sums["sparse"] / n_batches,
                loss_total=sums["total"] / n_batches,
                val_mse=val_mse,
                tau=tau,
                lr=lr,
                frequencies=[float(f) for f in model.bank.frequencies().data],
            )
        )
        if val_mse < best_mse:
            best_mse = val_mse
            best_state = model.state_dict()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                break

    model.load_state_dict(best_state)
    return model, log
