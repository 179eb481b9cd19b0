"""Forecasting model with learnable frequency bases and additive attribution.

Pipeline per window: project the input to a hidden space, decompose it
onto N learnable cosine bases, score each basis and select the top-K,
let one bias-free head per selected frequency produce an independent
contribution, and fuse the exact sum of those contributions with a
residual MLP through a learned gate.

The strict additivity of the frequency path is the structural guarantee
behind attribution: contributions sum exactly to the frequency
prediction (completeness), removing one changes it by exactly its own
contribution (faithfulness), a zero coefficient yields a zero
contribution because every head is bias-free (null frequency), and
identical heads on identical coefficients agree (symmetry).
"""

from __future__ import annotations

import io
import json
import warnings
import zipfile
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

SCORER_HIDDEN = 32

__all__ = [
    "ModelConfig",
    "FrequencyBank",
    "ForwardOutput",
    "AttributionReport",
    "FreqLens",
    "init_frequency_bank",
    "build_bases",
    "project",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    L: input window length (steps); H: forecast horizon (steps);
    C: channels; d: hidden width; N: number of frequency bases;
    K: selected frequencies per sample.
    """

    L: int = 96
    H: int = 96
    C: int = 7
    d: int = 64
    N: int = 32
    K: int = 8
    freq_mode: str = "learnable"  # or "fixed-prior"
    prior_periods: tuple[float, ...] | None = None
    gumbel_tau_start: float = 1.0
    gumbel_tau_end: float = 0.1
    seed: int = 0
    force_alpha: float | None = None  # pin the fusion gate (1.0 = frequency path only)

    def __post_init__(self):
        if self.L < 2:
            raise ValueError(f"L must be >= 2, got {self.L}")
        if self.H < 1 or self.C < 1 or self.d < 1:
            raise ValueError("H, C and d must be positive")
        if not 1 <= self.K <= self.N:
            raise ValueError(f"need 1 <= K <= N, got K={self.K}, N={self.N}")
        if self.freq_mode not in ("learnable", "fixed-prior"):
            raise ValueError(f"unknown freq_mode {self.freq_mode!r}")
        if self.freq_mode == "fixed-prior":
            if not self.prior_periods:
                raise ValueError("fixed-prior mode requires prior_periods")
            self.prior_periods = tuple(float(p) for p in self.prior_periods)
            if len(self.prior_periods) != self.N:
                raise ValueError(
                    f"fixed-prior mode needs N == len(prior_periods); "
                    f"got N={self.N}, {len(self.prior_periods)} periods"
                )
        if self.gumbel_tau_start <= 0 or self.gumbel_tau_end <= 0:
            raise ValueError("Gumbel temperatures must be positive")
        if self.force_alpha is not None and not 0.0 <= self.force_alpha <= 1.0:
            raise ValueError("force_alpha must lie in [0, 1]")


class FrequencyBank:
    """Raw frequency parameters and the bounded sigmoid mapping.

    f_i = f_min + (f_max - f_min) * sigmoid(theta_i), with
    f_min = 1/(10 L) (longest observable period) and f_max = 0.5 (the
    Nyquist frequency).  The sigmoid keeps every frequency strictly
    inside (f_min, f_max) with nonzero gradient everywhere, unlike hard
    clamping.  In fixed-prior mode theta/phase are frozen and the
    frequencies equal 1/period exactly for the configured periods.
    """

    def __init__(self, theta: Tensor, phase: Tensor, L: int, fixed_freqs: np.ndarray | None = None):
        self.theta = theta
        self.phase = phase
        self.f_min = 1.0 / (10.0 * L)
        self.f_max = 0.5
        self.fixed_freqs = fixed_freqs

    @property
    def n_bases(self) -> int:
        return self.theta.size

    @property
    def fixed(self) -> bool:
        return self.fixed_freqs is not None

    def frequencies(self) -> Tensor:
        if self.fixed_freqs is not None:
            return Tensor(self.fixed_freqs)
        # clamp the sigmoid away from {0, 1} so the mapped frequency stays
        # strictly inside (f_min, f_max) even when float64 saturates
        gate = ad.clip(ad.sigmoid(self.theta), 1e-15, np.nextafter(1.0, 0.0))
        return self.f_min + (self.f_max - self.f_min) * gate


def init_frequency_bank(config: ModelConfig) -> FrequencyBank:
    """Build the bank with log-uniform targets (or fixed prior periods).

    Learnable mode spreads N target frequencies log-uniformly over
    [1/L, 0.5] and inverts the sigmoid mapping so the initial
    frequencies reproduce the targets; phases start at 0.
    """
    f_min, f_max = 1.0 / (10.0 * config.L), 0.5
    if config.freq_mode == "fixed-prior":
        periods = np.asarray(config.prior_periods, dtype=np.float64)
        if np.any(periods <= 2.0):
            raise ValueError(f"prior periods must exceed 2 steps (Nyquist), got {periods.tolist()}")
        theta = Tensor(np.zeros(config.N), requires_grad=False)
        phase = Tensor(np.zeros(config.N), requires_grad=False)
        return FrequencyBank(theta, phase, config.L, fixed_freqs=1.0 / periods)

    lo, hi = np.log(1.0 / config.L), np.log(0.5)
    if config.N == 1:
        targets = np.array([np.exp(0.5 * (lo + hi))])
    else:
        targets = np.exp(np.linspace(lo, hi, config.N))
    t = (targets - f_min) / (f_max - f_min)
    t = np.minimum(t, np.nextafter(1.0, 0.0))  # top target touches f_max; keep logit finite
    theta = Tensor(np.log(t / (1.0 - t)), requires_grad=True)
    phase = Tensor(np.zeros(config.N), requires_grad=True)
    return FrequencyBank(theta, phase, config.L)


def build_bases(freqs: Tensor, phases: Tensor, L: int) -> tuple[Tensor, Tensor]:
    """Cosine bases psi_i(t) = cos(2 pi f_i t + phi_i) for t = 0..L-1.

    Returns the raw bases [N, L] and their unit-l2-norm rows.  Near-zero
    rows (only possible for pathological phases) are floored at 1e-8
    with a diagnostic instead of dividing by ~0.
    """
    n = freqs.size
    t = Tensor(np.arange(L, dtype=np.float64))
    angle = freqs.reshape((n, 1)) * t * (2.0 * np.pi) + phases.reshape((n, 1))
    psi = ad.cos(angle)
    norms = ad.sqrt(ad.square(psi).sum(axis=1, keepdims=True))
    if np.any(norms.data < 1e-8):
        warnings.warn("near-zero cosine basis row; flooring its norm at 1e-8")
        norms = ad.clip_min(norms, 1e-8)
    return psi, psi / norms


def project(hidden: Tensor, psi_bar: Tensor, return_components: bool = False):
    """Project hidden features onto the normalized bases.

    c_i = sum_t hidden[:, t, :] * psi_bar_i(t)   (unit norms, so the
    projection denominator is 1), per-frequency component
    H_i(t) = c_i * psi_bar_i(t), and reconstruction = sum_i H_i.

    Returns (c, reconstruction) or (c, components, reconstruction).
    """
    c = ad.einsum("bld,nl->bnd", hidden, psi_bar)
    recon = ad.einsum("bnd,nl->bld", c, psi_bar)
    if return_components:
        components = ad.einsum("bnd,nl->bnld", c, psi_bar)
        return c, components, recon
    return c, recon


@dataclass
class ForwardOutput:
    """Everything one forward pass produces, on the live tape."""

    y_hat: Tensor  # [B, H, C]
    y_freq: Tensor  # [B, H, C], exact sum of contributions
    y_res: Tensor  # [B, H, C]
    alpha: Tensor  # scalar gate in (0, 1)
    selected: np.ndarray  # [B, K] basis indices, slot k = k-th largest weight
    contributions: Tensor  # [B, K, H, C]
    coefficients: Tensor  # [B, N, d]
    recon_error: Tensor  # scalar
    soft_weights: Tensor  # [B, N] selection weights (sum to 1 per sample)
    frequencies: Tensor  # [N]


@dataclass
class AttributionReport:
    """Per-frequency attribution of one batch."""

    selected: np.ndarray  # [B, K] basis indices
    frequencies: np.ndarray  # [B, K] cycles/step
    periods_steps: np.ndarray  # [B, K] 1/frequency
    contributions: np.ndarray  # [B, K, H, C]
    magnitudes: np.ndarray  # [B, K] l2 norm per contribution
    alpha: float
    y_freq: np.ndarray  # [B, H, C]
    y_res: np.ndarray  # [B, H, C]


def _gumbel_noise(rng: np.random.Generator, shape) -> np.ndarray:
    u = np.clip(rng.uniform(size=shape), 1e-12, 1.0 - 1e-12)
    return -np.log(-np.log(u))


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class FreqLens:
    """The full model: projection, bank, scorer, heads, residual, gate.

    All linear maps are bias-free.  The heads must be: a bias-free
    ReLU MLP maps a zero coefficient to a zero contribution for any
    weights, which is what makes the null-frequency axiom hold exactly.
    It also makes head outputs positively homogeneous in the
    coefficient.

    Parameters are only mutated by the optimizer (single-threaded per
    run); a model that is not being trained is read-only and safe to
    share across threads for inference.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator | None = None):
        self.config = config
        rng = np.random.default_rng(config.seed) if rng is None else rng
        c = config
        self.bank = init_frequency_bank(c)
        self.input_proj = Tensor(_xavier(rng, c.C, c.d), requires_grad=True)
        self.scorer_w1 = Tensor(_xavier(rng, c.d, SCORER_HIDDEN), requires_grad=True)
        self.scorer_w2 = Tensor(_xavier(rng, SCORER_HIDDEN, 1), requires_grad=True)
        self.scorer_bias = Tensor(np.zeros(c.N), requires_grad=True)
        self.head_w1 = [Tensor(_xavier(rng, c.d, c.d), requires_grad=True) for _ in range(c.K)]
        self.head_w2 = [Tensor(_xavier(rng, c.d, c.H * c.C), requires_grad=True) for _ in range(c.K)]
        self.residual_w1 = Tensor(_xavier(rng, c.L * c.C, c.d), requires_grad=True)
        self.residual_w2 = Tensor(_xavier(rng, c.d, c.H * c.C), requires_grad=True)
        self.fusion_logit = Tensor(0.0, requires_grad=True)  # sigmoid(0) = 0.5

    # -- parameter bookkeeping ----------------------------------------------
    def parameters(self) -> list[tuple[str, Tensor]]:
        named = [
            ("bank.theta", self.bank.theta),
            ("bank.phase", self.bank.phase),
            ("input_proj", self.input_proj),
            ("scorer.w1", self.scorer_w1),
            ("scorer.w2", self.scorer_w2),
            ("scorer.bias", self.scorer_bias),
        ]
        for k in range(self.config.K):
            named.append((f"heads.{k}.w1", self.head_w1[k]))
            named.append((f"heads.{k}.w2", self.head_w2[k]))
        named.append(("residual.w1", self.residual_w1))
        named.append(("residual.w2", self.residual_w2))
        named.append(("fusion_logit", self.fusion_logit))
        return named

    def trainable_parameters(self) -> list[tuple[str, Tensor]]:
        frozen = {"bank.theta", "bank.phase"} if self.bank.fixed else set()
        if self.config.force_alpha is not None:
            frozen.add("fusion_logit")
        return [(n, p) for n, p in self.parameters() if n not in frozen]

    @staticmethod
    def frequency_parameter_names() -> frozenset[str]:
        return frozenset({"bank.theta", "bank.phase"})

    def parameter_counts(self) -> dict[str, int]:
        groups = {
            "input_proj": ("input_proj",),
            "frequency_bank": ("bank.",),
            "scorer": ("scorer.",),
            "heads": ("heads.",),
            "residual": ("residual.",),
            "fusion": ("fusion_logit",),
        }
        counts = {
            g: sum(p.size for n, p in self.parameters() if n.startswith(prefixes))
            for g, prefixes in groups.items()
        }
        counts["total"] = sum(counts.values())
        return counts

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: np.array(p.data, copy=True) for name, p in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.parameters())
        if set(state) != set(params):
            missing = set(params) - set(state)
            extra = set(state) - set(params)
            raise ValueError(f"state dict mismatch: missing={sorted(missing)}, extra={sorted(extra)}")
        for name, value in state.items():
            p = params[name]
            value = np.asarray(value, dtype=np.float64)
            if value.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {value.shape} vs {p.shape}")
            p.data = value.copy()

    def clone(self) -> "FreqLens":
        other = FreqLens(self.config)
        other.load_state_dict(self.state_dict())
        return other

    # -- forward pieces -------------------------------------------------------
    def _encode(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        """Input -> hidden -> bases -> coefficients; shared by all passes."""
        hidden = ad.matmul(x, self.input_proj)
        freqs = self.bank.frequencies()
        _, psi_bar = build_bases(freqs, self.bank.phase, self.config.L)
        c, recon = project(hidden, psi_bar)
        recon_error = ad.square(recon - hidden).mean()
        return hidden, freqs, c, recon_error

    def score_and_select(self, coefficients: Tensor, tau: float, training: bool,
                         rng: np.random.Generator | None = None) -> tuple[np.ndarray, Tensor]:
        """Score each basis and pick the top-K selection weights per sample.

        Scores are a shared bias-free MLP of each coefficient plus a
        per-basis offset.  Training adds Gumbel(0,1) noise before the
        tempered softmax; evaluation is noise-free.  The returned index
        array is ordered by decreasing weight (slot k of the heads is
        bound to the k-th strongest frequency).
        """
        if tau <= 0:
            raise ValueError(f"temperature must be positive, got {tau}")
        cfg = self.config
        h = ad.relu(ad.matmul(coefficients, self.scorer_w1))
        scores = ad.matmul(h, self.scorer_w2).reshape((coefficients.shape[0], cfg.N)) + self.scorer_bias
        if training:
            if rng is None:
                raise ValueError("training selection requires an rng for Gumbel noise")
            scores = scores + Tensor(_gumbel_noise(rng, scores.shape))
        weights = ad.softmax(scores / tau, axis=-1)
        order = np.argsort(-weights.data, axis=1, kind="stable")
        selected = order[:, : cfg.K]
        return selected, weights

    def head_contribution(self, slot: int, c_f: Tensor) -> Tensor:
        """Contribution [B, H, C] of head ``slot`` for coefficients [B, d]."""
        cfg = self.config
        h = ad.relu(ad.matmul(c_f, self.head_w1[slot]))
        out = ad.matmul(h, self.head_w2[slot])
        return out.reshape((c_f.shape[0], cfg.H, cfg.C))

    def _residual(self, x: Tensor) -> Tensor:
        cfg = self.config
        flat = x.reshape((x.shape[0], cfg.L * cfg.C))
        h = ad.relu(ad.matmul(flat, self.residual_w1))
        return ad.matmul(h, self.residual_w2).reshape((x.shape[0], cfg.H, cfg.C))

    def _gate(self) -> Tensor:
        if self.config.force_alpha is not None:
            return Tensor(self.config.force_alpha)
        return ad.sigmoid(self.fusion_logit)

    def forward(self, x, tau: float | None = None, training: bool = False,
                rng: np.random.Generator | None = None) -> ForwardOutput:
        """One pass: decompose, select, attribute, fuse.

        During training each contribution is multiplied by a
        straight-through weight whose forward value is exactly 1: the
        selection weights receive prediction-loss gradient without
        perturbing the additive identity in any mode.
        """
        cfg = self.config
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[1] != cfg.L or x.shape[2] != cfg.C:
            raise ValueError(f"forward: expected input [B, {cfg.L}, {cfg.C}], got {x.shape}")
        if tau is None:
            tau = cfg.gumbel_tau_end
        b = x.shape[0]

        xt = Tensor(x)
        _, freqs, c, recon_error = self._encode(xt)
        selected, weights = self.score_and_select(c, tau, training, rng)
        c_sel = ad.gather_rows(c, selected)

        if training:
            w_sel = ad.gather_rows(weights, selected)
            st = w_sel - w_sel.detach() + 1.0  # forward value is exactly 1
        parts = []
        for k in range(cfg.K):
            contrib = self.head_contribution(k, c_sel[:, k, :])
            if training:
                contrib = contrib * st[:, k].reshape((b, 1, 1))
            parts.append(contrib.reshape((b, 1, cfg.H, cfg.C)))
        contributions = ad.concat(parts, axis=1)
        y_freq = contributions.sum(axis=1)

        y_res = self._residual(xt)
        alpha = self._gate()
        y_hat = alpha * y_freq + (1.0 - alpha) * y_res
        return ForwardOutput(
            y_hat=y_hat,
            y_freq=y_freq,
            y_res=y_res,
            alpha=alpha,
            selected=selected,
            contributions=contributions,
            coefficients=c,
            recon_error=recon_error,
            soft_weights=weights,
            frequencies=freqs,
        )

    def masked_forward(self, x, selection: np.ndarray, subset: Sequence[int]) -> np.ndarray:
        """Frequency prediction using only the basis indices in ``subset``.

        ``selection`` must come from a prior forward on the same input;
        the selection is held fixed and the kept heads are re-run, so
        the full subset reproduces that forward's y_freq and the empty
        subset is exactly zero.
        """
        cfg = self.config
        x = np.asarray(x, dtype=np.float64)
        selection = np.asarray(selection)
        subset = frozenset(int(i) for i in subset)
        for b in range(selection.shape[0]):
            missing = subset - set(int(i) for i in selection[b])
            if missing:
                raise ValueError(
                    f"masked_forward: indices {sorted(missing)} not in the selected set of sample {b}"
                )
        xt = Tensor(x)
        _, _, c, _ = self._encode(xt)
        c_sel = ad.gather_rows(c, selection)
        keep = np.isin(selection, sorted(subset)).astype(np.float64)  # [B, K]
        parts = []
        for k in range(cfg.K):
            contrib = self.head_contribution(k, c_sel[:, k, :])
            parts.append(contrib.reshape((x.shape[0], 1, cfg.H, cfg.C)))
        stacked = ad.concat(parts, axis=1)
        masked = stacked * Tensor(keep[:, :, None, None])
        return masked.sum(axis=1).data

    def attribute(self, output: ForwardOutput) -> AttributionReport:
        """Per-frequency attribution: exactly the head contributions."""
        freqs = output.frequencies.data
        sel_freqs = freqs[output.selected]
        contrib = np.array(output.contributions.data, copy=True)
        mags = np.sqrt((contrib ** 2).sum(axis=(2, 3)))
        return AttributionReport(
            selected=output.selected.copy(),
            frequencies=sel_freqs,
            periods_steps=1.0 / sel_freqs,
            contributions=contrib,
            magnitudes=mags,
            alpha=float(output.alpha.data),
            y_freq=np.array(output.y_freq.data, copy=True),
            y_res=np.array(output.y_res.data, copy=True),
        )


# ---------------------------------------------------------------------------
# checkpoint container: zip of .npy arrays plus a JSON manifest, written
# with fixed timestamps so identical models serialize to identical bytes
# ---------------------------------------------------------------------------

_CHECKPOINT_VERSION = 1


def save_checkpoint(model: FreqLens, path, seed: int | None = None) -> None:
    manifest = {
        "format_version": _CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "seed": seed,
        "arrays": [name for name, _ in model.parameters()],
    }
    with zipfile.ZipFile(path, "w") as zf:
        def put(name: str, payload: bytes) -> None:
            info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, payload)

        put("manifest.json", json.dumps(manifest, indent=2, sort_keys=True).encode())
        for name, p in model.parameters():
            buf = io.BytesIO()
            np.save(buf, p.data)
            put(f"arrays/{name}.npy", buf.getvalue())


def load_checkpoint(path) -> tuple[FreqLens, int | None]:
    with zipfile.ZipFile(path, "r") as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format_version") != _CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {manifest.get('format_version')}")
        cfg_dict = dict(manifest["config"])
        if cfg_dict.get("prior_periods") is not None:
            cfg_dict["prior_periods"] = tuple(cfg_dict["prior_periods"])
        config = ModelConfig(**cfg_dict)
        model = FreqLens(config)
        state = {}
        for name in manifest["arrays"]:
            state[name] = np.load(io.BytesIO(zf.read(f"arrays/{name}.npy")))
        model.load_state_dict(state)
    return model, manifest.get("seed")
