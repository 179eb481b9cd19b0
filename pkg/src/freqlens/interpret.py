"""Post-hoc interpretation: period discovery, baselines, and attribution checks.

Learned frequencies are read as periods (1/f), matched against known
physical cycles, and compared with classical FFT peak detection.  The
attribution side is verified two ways: a perturbation test that
recomputes predictions with frequencies removed, and an exact Shapley
oracle that enumerates every coalition; for the additive frequency path
both must agree with the raw contributions.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .model import FreqLens

__all__ = [
    "PeriodMatch",
    "KnownPeriodSummary",
    "SeedDiscovery",
    "DiscoveryReport",
    "FaithfulnessResult",
    "AxiomCheck",
    "AlphaSummary",
    "periods_from_frequencies",
    "match_known_periods",
    "fft_peak_detection",
    "shapley_bruteforce",
    "faithfulness_test",
    "alpha_report",
    "selection_counts",
    "build_discovery_report",
    "verify_axioms",
    "export_spectrum_csv",
    "export_loss_curves_csv",
]


# ---------------------------------------------------------------------------
# periods and matching
# ---------------------------------------------------------------------------

def periods_from_frequencies(freqs, step_duration: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Periods in steps (1/f) and in physical units (steps * step_duration)."""
    freqs = np.asarray(freqs, dtype=np.float64)
    if np.any(freqs <= 0):
        raise ValueError("frequencies must be positive")
    steps = 1.0 / freqs
    return steps, steps * step_duration


@dataclass
class PeriodMatch:
    known_period: float
    learned_period: float
    relative_error: float
    matched: bool


def match_known_periods(learned, known, delta: float = 0.15) -> list[PeriodMatch]:
    """Pair each known period with its closest learned period.

    A pair counts as a match when |learned - known| / known < delta.
    Both lists must share a unit (steps or physical); matching is
    scale-invariant, so either works as long as it is consistent.
    """
    learned = np.asarray(learned, dtype=np.float64)
    if learned.size == 0:
        raise ValueError("no learned periods to match")
    out = []
    for k in np.asarray(known, dtype=np.float64):
        errors = np.abs(learned - k) / k
        best = int(np.argmin(errors))
        err = float(errors[best])
        out.append(PeriodMatch(float(k), float(learned[best]), err, err < delta))
    return out


# ---------------------------------------------------------------------------
# FFT baseline
# ---------------------------------------------------------------------------

def fft_peak_detection(series, top_k: int = 2) -> list[float]:
    """Dominant periods by amplitude-spectrum peaks.

    The series is mean-removed, the DFT amplitude spectrum is scanned
    for interior local maxima (bin amplitude strictly above both
    neighbors, DC excluded), and the periods T/k of the ``top_k``
    largest peaks are returned (amplitude ties broken toward longer
    periods).  Recovers integer-cycle cosine periods exactly when the
    series length is a multiple of the period.
    """
    x = np.asarray(series, dtype=np.float64).ravel()
    if x.size < 4:
        raise ValueError("need at least 4 samples for peak detection")
    x = x - x.mean()
    amp = np.abs(np.fft.rfft(x))
    peaks = [k for k in range(1, amp.size - 1) if amp[k] > amp[k - 1] and amp[k] > amp[k + 1]]
    peaks.sort(key=lambda k: (-amp[k], k))
    return [x.size / k for k in peaks[:top_k]]


# ---------------------------------------------------------------------------
# exact Shapley oracle
# ---------------------------------------------------------------------------

def shapley_bruteforce(contributions, aggregate: str = "per-element") -> np.ndarray:
    """Exact Shapley values of the coalition game over frequency contributions.

    The game value of a coalition T is the sum of its contribution
    tensors ("per-element", an array-valued game) or the l2 norm of
    that sum ("l2-magnitude", a scalar game).  All 2^K coalitions are
    enumerated with the weights |T|! (K-|T|-1)! / K!; K is capped at 12.
    """
    contribs = np.asarray(contributions, dtype=np.float64)
    k_players = contribs.shape[0]
    if k_players > 12:
        raise ValueError(f"exact enumeration is limited to K <= 12, got K={k_players}")
    if aggregate not in ("per-element", "l2-magnitude"):
        raise ValueError(f"unknown aggregate {aggregate!r}")

    sums = np.zeros((2 ** k_players,) + contribs.shape[1:])
    for mask in range(1, 2 ** k_players):
        low = mask & -mask
        sums[mask] = sums[mask ^ low] + contribs[low.bit_length() - 1]

    if aggregate == "l2-magnitude":
        values = np.array([np.linalg.norm(s) for s in sums])
        phi = np.zeros(k_players)
    else:
        values = sums
        phi = np.zeros_like(contribs)

    fact = math.factorial
    weight = [fact(s) * fact(k_players - s - 1) / fact(k_players) for s in range(k_players)]
    for f in range(k_players):
        bit = 1 << f
        for mask in range(2 ** k_players):
            if mask & bit:
                continue
            s = bin(mask).count("1")
            phi[f] += weight[s] * (values[mask | bit] - values[mask])
    return phi


# ---------------------------------------------------------------------------
# faithfulness perturbation test
# ---------------------------------------------------------------------------

@dataclass
class FaithfulnessResult:
    k: int
    mean_abs_change: float  # of the fused prediction (includes the gate)
    mean_abs_change_freq_path: float
    attribution_impact_correlation: float
    n_samples: int


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation; degenerate (constant) inputs count as perfectly aligned."""
    a = a.ravel()
    b = b.ravel()
    if a.std() == 0.0 or b.std() == 0.0:
        return 1.0
    return float(np.corrcoef(a, b)[0, 1])


def per_frequency_impacts(model: FreqLens, inputs, tau: float | None = None,
                          max_samples: int = 64) -> tuple[np.ndarray, np.ndarray, float]:
    """Removal impact of each selected frequency, by masked recomputation.

    Returns (attribution magnitudes [B, K], fused-prediction impact l2
    norms [B, K], gate value).  For the additive path the impact of
    frequency f is exactly gate * ||contribution(f)||.
    """
    x = np.asarray(inputs, dtype=np.float64)[:max_samples]
    out = model.forward(x, tau=tau, training=False)
    alpha = float(out.alpha.data)
    contrib = out.contributions.data
    mags = np.sqrt((contrib ** 2).sum(axis=(2, 3)))
    b_total, k_total = out.selected.shape
    impacts = np.zeros((b_total, k_total))
    for b in range(b_total):
        xb = x[b : b + 1]
        sel = out.selected[b : b + 1]
        full = model.masked_forward(xb, sel, sel[0])
        for slot, f in enumerate(sel[0]):
            partial = model.masked_forward(xb, sel, [i for i in sel[0] if i != f])
            impacts[b, slot] = alpha * float(np.linalg.norm(full - partial))
    return mags, impacts, alpha


def faithfulness_test(model: FreqLens, inputs, k_list, tau: float | None = None,
                      max_samples: int = 64) -> list[FaithfulnessResult]:
    """Remove the top-k attributed frequencies and measure prediction change.

    Frequencies are ranked per sample by attribution magnitude; the
    fused-prediction change of removing the top k is
    gate * (M(S) - M(S minus top-k)).  The reported correlation pools
    per-frequency attribution magnitudes against their individual
    removal impacts, which the additive structure forces to be
    perfectly linear.
    """
    x = np.asarray(inputs, dtype=np.float64)[:max_samples]
    out = model.forward(x, tau=tau, training=False)
    alpha = float(out.alpha.data)
    contrib = out.contributions.data
    mags = np.sqrt((contrib ** 2).sum(axis=(2, 3)))
    _, impacts, _ = per_frequency_impacts(model, x, tau=tau, max_samples=max_samples)
    correlation = _pearson(mags, impacts)

    b_total = x.shape[0]
    results = []
    seen = set()
    for k in k_list:
        k_eff = min(int(k), model.config.K)
        if k_eff in seen:
            continue  # requested sizes above K collapse onto K
        seen.add(k_eff)
        fused_changes = []
        freq_changes = []
        for b in range(b_total):
            xb = x[b : b + 1]
            sel = out.selected[b : b + 1]
            ranked = np.argsort(-mags[b], kind="stable")
            removed = set(int(sel[0][slot]) for slot in ranked[:k_eff])
            kept = [i for i in sel[0] if int(i) not in removed]
            full = model.masked_forward(xb, sel, sel[0])
            partial = model.masked_forward(xb, sel, kept)
            freq_delta = full - partial
            fused_changes.append(np.abs(alpha * freq_delta).mean())
            freq_changes.append(np.abs(freq_delta).mean())
        results.append(
            FaithfulnessResult(
                k=k_eff,
                mean_abs_change=float(np.mean(fused_changes)),
                mean_abs_change_freq_path=float(np.mean(freq_changes)),
                attribution_impact_correlation=correlation,
                n_samples=b_total,
            )
        )
    return results


# ---------------------------------------------------------------------------
# discovery and gate reports
# ---------------------------------------------------------------------------

@dataclass
class AlphaSummary:
    values: list[float]
    mean: float
    std: float


def alpha_report(models) -> AlphaSummary:
    """Fusion-gate values across trained models (mean and population std)."""
    values = []
    for model in models:
        gate = model.config.force_alpha
        if gate is None:
            gate = 1.0 / (1.0 + math.exp(-float(model.fusion_logit.data)))
        values.append(float(gate))
    if not values:
        raise ValueError("need at least one model")
    return AlphaSummary(values, float(np.mean(values)), float(np.std(values)))


def selection_counts(model: FreqLens, inputs, tau: float | None = None,
                     batch_size: int = 256) -> np.ndarray:
    """How often each basis index is selected over a window set."""
    x = np.asarray(inputs, dtype=np.float64)
    counts = np.zeros(model.config.N, dtype=np.int64)
    for start in range(0, x.shape[0], batch_size):
        out = model.forward(x[start : start + batch_size], tau=tau, training=False)
        np.add.at(counts, out.selected.ravel(), 1)
    return counts


@dataclass
class SeedDiscovery:
    seed: int
    periods_steps: list[float]  # ascending
    matches: list[PeriodMatch]
    selection_counts: list[int]


@dataclass
class KnownPeriodSummary:
    known_period: float
    n_matched: int
    mean_learned: float | None
    std_learned: float | None


@dataclass
class DiscoveryReport:
    delta: float
    known_periods: list[float]
    seeds: list[SeedDiscovery] = field(default_factory=list)
    summary: list[KnownPeriodSummary] = field(default_factory=list)


def build_discovery_report(seeded_models, known_periods_steps, delta: float = 0.15,
                           test_inputs=None) -> DiscoveryReport:
    """Cross-seed discovery table: learned periods vs known cycles.

    ``seeded_models`` is a sequence of (seed, model); ``test_inputs``
    optionally adds per-basis selection counts over that window set.
    Per known period, the summary aggregates the matched seeds only.
    """
    known = [float(k) for k in known_periods_steps]
    report = DiscoveryReport(delta=delta, known_periods=known)
    for seed, model in seeded_models:
        freqs = model.bank.frequencies().data
        periods, _ = periods_from_frequencies(freqs)
        matches = match_known_periods(periods, known, delta=delta)
        counts = (
            selection_counts(model, test_inputs).tolist() if test_inputs is not None else [0] * model.config.N
        )
        report.seeds.append(
            SeedDiscovery(
                seed=int(seed),
                periods_steps=sorted(float(p) for p in periods),
                matches=matches,
                selection_counts=counts,
            )
        )
    for j, k in enumerate(known):
        learned = [s.matches[j].learned_period for s in report.seeds if s.matches[j].matched]
        report.summary.append(
            KnownPeriodSummary(
                known_period=k,
                n_matched=len(learned),
                mean_learned=float(np.mean(learned)) if learned else None,
                std_learned=float(np.std(learned)) if learned else None,
            )
        )
    return report


# ---------------------------------------------------------------------------
# axiom verification
# ---------------------------------------------------------------------------

@dataclass
class AxiomCheck:
    passed: bool
    max_deviation: float


def verify_axioms(model: FreqLens, inputs=None, tol: float = 1e-9,
                  rng: np.random.Generator | None = None) -> dict[str, AxiomCheck]:
    """Check the four attribution axioms plus Shapley equivalence.

    Holds for any weights by construction, so a randomly initialized
    model is a valid subject.  Completeness and faithfulness are
    checked within ``tol``; the null-frequency and symmetry checks are
    bit-exact.
    """
    cfg = model.config
    if inputs is None:
        rng = np.random.default_rng(0) if rng is None else rng
        inputs = rng.normal(size=(2, cfg.L, cfg.C))
    x = np.asarray(inputs, dtype=np.float64)
    out = model.forward(x)
    checks: dict[str, AxiomCheck] = {}

    dev = float(np.abs(out.contributions.data.sum(axis=1) - out.y_freq.data).max())
    checks["completeness"] = AxiomCheck(dev < tol, dev)

    dev = 0.0
    for b in range(x.shape[0]):
        xb = x[b : b + 1]
        sel = out.selected[b : b + 1]
        full = model.masked_forward(xb, sel, sel[0])
        for slot, f in enumerate(sel[0]):
            partial = model.masked_forward(xb, sel, [i for i in sel[0] if i != f])
            dev = max(dev, float(np.abs(full - partial - out.contributions.data[b, slot]).max()))
    checks["faithfulness"] = AxiomCheck(dev < tol, dev)

    dev = max(
        float(np.abs(model.head_contribution(k, Tensor(np.zeros((1, cfg.d)))).data).max())
        for k in range(cfg.K)
    )
    checks["null_frequency"] = AxiomCheck(dev == 0.0, dev)

    twin = model.clone()
    twin.head_w1[1].data = twin.head_w1[0].data.copy()
    twin.head_w2[1].data = twin.head_w2[0].data.copy()
    c_f = Tensor(np.random.default_rng(1).normal(size=(2, cfg.d)))
    dev = float(
        np.abs(twin.head_contribution(0, c_f).data - twin.head_contribution(1, c_f).data).max()
    )
    checks["symmetry"] = AxiomCheck(dev == 0.0, dev)

    dev = 0.0
    for b in range(x.shape[0]):
        phi = shapley_bruteforce(out.contributions.data[b])
        dev = max(dev, float(np.abs(phi - out.contributions.data[b]).max()))
    checks["shapley_equivalence"] = AxiomCheck(dev < tol, dev)
    return checks


# ---------------------------------------------------------------------------
# plot-ready CSV exports
# ---------------------------------------------------------------------------

def export_spectrum_csv(path, model: FreqLens, known_periods_steps=(), delta: float = 0.15,
                        counts: np.ndarray | None = None) -> None:
    """Per-basis rows of (frequency, period, selection count, matched flag)."""
    freqs = model.bank.frequencies().data
    periods, _ = periods_from_frequencies(freqs)
    known = np.asarray(list(known_periods_steps), dtype=np.float64)
    if counts is None:
        counts = np.zeros(model.config.N, dtype=np.int64)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["basis_index", "frequency", "period_steps", "selection_count", "matched"])
        for i in range(model.config.N):
            matched = bool(known.size) and bool(
                np.any(np.abs(periods[i] - known) / known < delta)
            )
            writer.writerow([i, repr(float(freqs[i])), repr(float(periods[i])), int(counts[i]), int(matched)])


def export_loss_curves_csv(path, log) -> None:
    """Per-epoch loss components and validation error, one row per epoch."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["epoch", "loss_pred", "loss_div", "loss_recon", "loss_sparse", "loss_total", "val_mse", "tau", "lr"]
        )
        for r in log.records:
            writer.writerow(
                [r.epoch, r.loss_pred, r.loss_div, r.loss_recon, r.loss_sparse, r.loss_total, r.val_mse, r.tau, r.lr]
            )
