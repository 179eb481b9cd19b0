"""Command-line entry point for reproducible runs.

Commands: synth, train, evaluate, compare, discover, attribute,
faithfulness, verify-axioms.  Every command is a pure function of the
config file, the input files, and the seed: identical inputs produce
identical outputs.

The config file is a flat JSON object; every key has a documented
default (see CONFIG_REFERENCE) and unknown keys are hard errors so a
typo cannot silently fall back to a default.

Exit codes: 0 success, 1 usage or config error, 2 verification
failure, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import SplitSpec, fit_apply_zscore, load_csv, make_windows, save_csv, synth_series
from .interpret import (
    alpha_report,
    build_discovery_report,
    export_loss_curves_csv,
    export_spectrum_csv,
    faithfulness_test,
    selection_counts,
    verify_axioms,
)
from .model import FreqLens, ModelConfig, load_checkpoint, save_checkpoint
from .stats import compute_metrics, paired_ttest
from .training import LossWeights, TrainConfig, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFICATION = 2
EXIT_NUMERIC = 3


class ConfigError(Exception):
    pass


# key -> (default, help); None defaults carry their expected type in _NONEABLE
CONFIG_REFERENCE = {
    "dataset": (None, "path to the input CSV (header row, optional timestamp column)"),
    "step_duration": (3600.0, "physical seconds per time step"),
    "timestamp_column": ("date", "header name of the excluded timestamp column"),
    "columns": (None, "optional list of channel names to keep, in order"),
    "split_mode": ("ratio", "chronological split flavor: 'ratio' or 'months'"),
    "split_train": (0.7, "train fraction (ratio mode)"),
    "split_val": (0.1, "validation fraction (ratio mode)"),
    "split_test": (0.2, "test fraction (ratio mode)"),
    "split_months": ([12, 4, 4], "train/val/test month counts (months mode, 30-day months)"),
    "synth_periods": ([24.0, 12.0], "cosine periods in steps for the synthetic generator"),
    "synth_amplitudes": ([1.0, 0.5], "cosine amplitudes, one per period"),
    "synth_phases": ([0.0, 0.0], "cosine phases in radians, one per period"),
    "synth_trend_slope": (0.0, "linear trend added per step"),
    "synth_noise_std": (0.1, "standard deviation of additive Gaussian noise"),
    "synth_length": (2000, "number of generated steps"),
    "synth_seed": (0, "seed of the synthetic noise"),
    "input_length": (96, "input window length L in steps"),
    "horizon": (96, "forecast horizon H in steps"),
    "hidden_width": (64, "hidden width d"),
    "num_bases": (32, "number of frequency bases N"),
    "top_k": (8, "selected frequencies K per sample"),
    "freq_mode": ("learnable", "'learnable' or 'fixed-prior'"),
    "prior_periods": (None, "fixed-prior periods in steps (requires freq_mode='fixed-prior')"),
    "gumbel_tau_start": (1.0, "selection temperature at the first epoch"),
    "gumbel_tau_end": (0.1, "selection temperature at the final epoch"),
    "force_alpha": (None, "pin the fusion gate to this value (1.0 = frequency path only)"),
    "epochs": (50, "training epochs"),
    "base_lr": (1e-3, "base learning rate (cosine-annealed)"),
    "freq_lr_multiplier": (5.0, "learning-rate multiplier for frequency parameters"),
    "batch_size": (32, "training batch size"),
    "patience": (10, "early-stopping patience in epochs"),
    "lambda_div": (0.01, "weight of the frequency-gap barrier"),
    "lambda_recon": (0.1, "weight of the hidden reconstruction error"),
    "lambda_sparse": (0.01, "weight of the selection L1 penalty"),
    "lambda_variance": (0.1, "accepted for config compatibility; attaches to no loss term"),
    "epsilon_div": (1e-6, "epsilon inside the gap barrier logarithm"),
    "known_periods": ([], "known physical periods in seconds, for discovery matching"),
    "delta": (0.15, "relative-error threshold for a period match"),
    "faithfulness_k": ([1, 2, 4, 8], "top-k removal sizes for the faithfulness test"),
    "out_dir": ("runs", "artifact output directory"),
    "seeds": ([42, 123, 456], "seed list; each seed trains one model"),
}

_NONEABLE = {"dataset": str, "columns": list, "prior_periods": list, "force_alpha": float}


@dataclass
class RunConfig:
    values: dict

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key) from None

    def model_config(self, channels: int, seed: int) -> ModelConfig:
        prior = self.values["prior_periods"]
        return ModelConfig(
            L=self.values["input_length"],
            H=self.values["horizon"],
            C=channels,
            d=self.values["hidden_width"],
            N=self.values["num_bases"],
            K=self.values["top_k"],
            freq_mode=self.values["freq_mode"],
            prior_periods=tuple(prior) if prior else None,
            gumbel_tau_start=self.values["gumbel_tau_start"],
            gumbel_tau_end=self.values["gumbel_tau_end"],
            seed=seed,
            force_alpha=self.values["force_alpha"],
        )

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.values["epochs"],
            base_lr=self.values["base_lr"],
            freq_lr_multiplier=self.values["freq_lr_multiplier"],
            batch_size=self.values["batch_size"],
            patience=self.values["patience"],
            tau_start=self.values["gumbel_tau_start"],
            tau_end=self.values["gumbel_tau_end"],
            seed=seed,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            lambda_div=self.values["lambda_div"],
            lambda_recon=self.values["lambda_recon"],
            lambda_sparse=self.values["lambda_sparse"],
            lambda_variance=self.values["lambda_variance"],
            epsilon_div=self.values["epsilon_div"],
        )

    def split_spec(self) -> SplitSpec:
        if self.values["split_mode"] == "months":
            return SplitSpec(mode="months", months=tuple(self.values["split_months"]))
        return SplitSpec(
            mode="ratio",
            train=self.values["split_train"],
            val=self.values["split_val"],
            test=self.values["split_test"],
        )


def load_config(path: str | None) -> RunConfig:
    raw = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a flat JSON object")
    unknown = sorted(set(raw) - set(CONFIG_REFERENCE))
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown} (see the config reference)")
    values = {}
    for key, (default, _) in CONFIG_REFERENCE.items():
        value = raw.get(key, default)
        values[key] = _check_type(key, value, default)
    return RunConfig(values)


def _check_type(key, value, default):
    if value is None:
        if key in _NONEABLE or default is None:
            return None
        raise ConfigError(f"config key {key!r} must not be null")
    expected = _NONEABLE[key] if key in _NONEABLE else type(default)
    if expected is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if not isinstance(value, expected) or isinstance(value, bool) is not (expected is bool):
        raise ConfigError(f"config key {key!r} expects {expected.__name__}, got {value!r}")
    return value


def config_reference_text() -> str:
    lines = ["configuration keys (flat JSON object):"]
    for key, (default, help_text) in CONFIG_REFERENCE.items():
        lines.append(f"  {key:20s} default={default!r}: {help_text}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

def _load_windows(cfg: RunConfig):
    if cfg.dataset is None:
        raise ConfigError("this command needs a 'dataset' path in the config")
    table = load_csv(
        cfg.dataset,
        timestamp_column=cfg.timestamp_column,
        columns=cfg.columns,
        step_duration=cfg.step_duration,
    )
    split = cfg.split_spec()
    normalized, stats = fit_apply_zscore(table, split)
    windows = make_windows(normalized, cfg.input_length, cfg.horizon, split)
    return table, normalized, stats, windows


def _seed_list(cfg: RunConfig, args) -> list[int]:
    if getattr(args, "seed", None) is not None:
        return [args.seed]
    return [int(s) for s in cfg.seeds]


def _out_dir(cfg: RunConfig, args) -> Path:
    out = Path(getattr(args, "out", None) or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _checkpoint_paths(run_dir: Path) -> list[Path]:
    paths = sorted(run_dir.glob("checkpoint-*.ckpt"))
    if not paths:
        raise ConfigError(f"no checkpoint-*.ckpt files in {run_dir}")
    return paths


def _dump_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, args) -> int:
    periods = cfg.synth_periods
    amplitudes = cfg.synth_amplitudes or [1.0] * len(periods)
    phases = cfg.synth_phases or [0.0] * len(periods)
    if not (len(periods) == len(amplitudes) == len(phases)):
        raise ConfigError("synth_periods, synth_amplitudes, and synth_phases must have equal lengths")
    table = synth_series(
        list(zip(periods, amplitudes, phases)),
        trend_slope=cfg.synth_trend_slope,
        noise_std=cfg.synth_noise_std,
        length=cfg.synth_length,
        seed=cfg.synth_seed,
        step_duration=cfg.step_duration,
    )
    out = _out_dir(cfg, args) / "synthetic.csv"
    save_csv(table, out)
    print(f"wrote {out}: {table.n_steps} steps x {table.n_channels} channel(s), periods {periods}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    _, _, _, windows = _load_windows(cfg)
    out = _out_dir(cfg, args)
    channels = windows["train"].inputs.shape[2]
    for seed in _seed_list(cfg, args):
        model = FreqLens(cfg.model_config(channels, seed))
        trained, log = train(model, windows["train"], windows["val"], cfg.train_config(seed), cfg.loss_weights())
        save_checkpoint(trained, out / f"checkpoint-{seed}.ckpt", seed=seed)
        log.save(out / f"trainlog-{seed}.jsonl")
        export_loss_curves_csv(out / f"losscurves-{seed}.csv", log)
        best = min(r.val_mse for r in log.records)
        print(f"seed {seed}: {len(log.records)} epochs, best validation MSE {best:.6f}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, args) -> int:
    _, _, _, windows = _load_windows(cfg)
    dataset = windows[args.split]
    run_dir = Path(args.run)
    per_seed = {}
    for path in _checkpoint_paths(run_dir):
        model, seed = load_checkpoint(path)
        if (model.config.L, model.config.H, model.config.C) != (
            cfg.input_length,
            cfg.horizon,
            dataset.inputs.shape[2],
        ):
            raise ConfigError(
                f"{path.name}: checkpoint shape (L={model.config.L}, H={model.config.H}, "
                f"C={model.config.C}) does not match the configured data"
            )
        preds = []
        for start in range(0, dataset.inputs.shape[0], 256):
            out = model.forward(dataset.inputs[start : start + 256], training=False)
            preds.append(out.y_hat.data)
        metrics = compute_metrics(np.concatenate(preds), dataset.targets)
        per_seed[str(seed)] = {
            "mse": metrics.mse,
            "mae": metrics.mae,
            "rmse": metrics.rmse,
            "n_windows": int(dataset.inputs.shape[0]),
        }
        print(f"seed {seed} [{args.split}]: mse={metrics.mse:.6f} mae={metrics.mae:.6f} rmse={metrics.rmse:.6f}")
    payload = {"split": args.split, "per_seed": per_seed}
    _dump_json(run_dir / f"metrics-{args.split}.json", payload)
    return EXIT_OK


def cmd_compare(cfg: RunConfig, args) -> int:
    def read_metrics(path):
        with open(path) as fh:
            payload = json.load(fh)
        return payload["per_seed"]

    a, b = read_metrics(args.a), read_metrics(args.b)
    shared = sorted(set(a) & set(b), key=int)
    if len(shared) < 2:
        raise ConfigError("compare needs at least two shared seeds between the two runs")
    xs = [a[s][args.metric] for s in shared]
    ys = [b[s][args.metric] for s in shared]
    result = paired_ttest(xs, ys)
    payload = {"metric": args.metric, "seeds": [int(s) for s in shared], **asdict(result)}
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_discover(cfg: RunConfig, args) -> int:
    _, _, _, windows = _load_windows(cfg)
    run_dir = Path(args.run)
    delta = args.delta if args.delta is not None else cfg.delta
    known_steps = [p / cfg.step_duration for p in cfg.known_periods]
    if not known_steps:
        raise ConfigError("discover needs a nonempty 'known_periods' list (physical seconds)")
    seeded = []
    for path in _checkpoint_paths(run_dir):
        model, seed = load_checkpoint(path)
        seeded.append((seed, model))
    report = build_discovery_report(seeded, known_steps, delta=delta, test_inputs=windows["test"].inputs)
    out = _out_dir(cfg, args)
    _dump_json(out / "discovery.json", asdict(report))
    for seed, model in seeded:
        counts = selection_counts(model, windows["test"].inputs)
        export_spectrum_csv(out / f"spectrum-{seed}.csv", model, known_steps, delta, counts)
    gates = alpha_report([m for _, m in seeded])
    _dump_json(out / "alpha.json", asdict(gates))
    for summary in report.summary:
        physical = summary.known_period * cfg.step_duration
        mean = "none" if summary.mean_learned is None else f"{summary.mean_learned:.3f}"
        print(
            f"known period {summary.known_period:g} steps ({physical:g}s): "
            f"matched by {summary.n_matched}/{len(report.seeds)} seeds, mean learned {mean}"
        )
    return EXIT_OK


def cmd_attribute(cfg: RunConfig, args) -> int:
    _, _, _, windows = _load_windows(cfg)
    dataset = windows[args.split]
    if not 0 <= args.index < dataset.inputs.shape[0]:
        raise ConfigError(
            f"sample index {args.index} out of range for {dataset.inputs.shape[0]} {args.split} windows"
        )
    model, seed = load_checkpoint(args.checkpoint)
    x = dataset.inputs[args.index : args.index + 1]
    out = model.forward(x, training=False)
    report = model.attribute(out)
    completeness = float(np.abs(report.contributions.sum(axis=1) - report.y_freq).max())
    payload = {
        "seed": seed,
        "split": args.split,
        "sample_index": args.index,
        "alpha": report.alpha,
        "selected_bases": report.selected[0].tolist(),
        "frequencies": report.frequencies[0].tolist(),
        "periods_steps": report.periods_steps[0].tolist(),
        "periods_physical": (report.periods_steps[0] * cfg.step_duration).tolist(),
        "attribution_magnitudes": report.magnitudes[0].tolist(),
        "contributions": report.contributions[0].tolist(),
        "y_freq": report.y_freq[0].tolist(),
        "y_res": report.y_res[0].tolist(),
        "completeness_residual": completeness,
    }
    out_path = _out_dir(cfg, args) / f"attribution-{args.index}.json"
    _dump_json(out_path, payload)
    print(
        f"wrote {out_path}: {len(payload['selected_bases'])} contributions, "
        f"alpha={report.alpha:.4f}, completeness residual {completeness:.2e}"
    )
    return EXIT_OK


def cmd_faithfulness(cfg: RunConfig, args) -> int:
    _, _, _, windows = _load_windows(cfg)
    model, seed = load_checkpoint(args.checkpoint)
    k_list = [args.topk] if args.topk is not None else list(cfg.faithfulness_k)
    results = faithfulness_test(model, windows["test"].inputs, k_list)
    payload = {"seed": seed, "results": [asdict(r) for r in results]}
    out_path = _out_dir(cfg, args) / "faithfulness.json"
    _dump_json(out_path, payload)
    for r in results:
        print(
            f"k={r.k}: mean |change|={r.mean_abs_change:.3e} "
            f"(frequency path {r.mean_abs_change_freq_path:.3e}), "
            f"attribution/impact correlation {r.attribution_impact_correlation:.9f}"
        )
    return EXIT_OK


def cmd_verify_axioms(cfg: RunConfig, args) -> int:
    if args.checkpoint is not None:
        model, _ = load_checkpoint(args.checkpoint)
    else:
        seed = args.seed if args.seed is not None else int(cfg.seeds[0])
        channels = 1 if cfg.dataset is None else None
        if channels is None:
            _, _, _, windows = _load_windows(cfg)
            channels = windows["train"].inputs.shape[2]
        model = FreqLens(cfg.model_config(channels, seed))
    checks = verify_axioms(model)
    failed = [name for name, check in checks.items() if not check.passed]
    for name, check in checks.items():
        status = "PASS" if check.passed else "FAIL"
        print(f"{name}: {status} (max deviation {check.max_deviation:.3e})")
    return EXIT_VERIFICATION if failed else EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freqlens",
        description="interpretable forecasting with learnable frequency bases",
        epilog=config_reference_text(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=None, run=False):
        p.add_argument("--config", default=None, help="path to the flat JSON config")
        p.add_argument("--out", default=None, help="output directory (default: config out_dir)")
        p.add_argument("--seed", type=int, default=None, help="single seed overriding the config list")
        if checkpoint is not None:
            p.add_argument("--checkpoint", required=checkpoint, default=None,
                           help="path to a checkpoint file")
        if run:
            p.add_argument("--run", required=True, help="run directory holding checkpoint-*.ckpt")

    common(sub.add_parser("synth", help="write a synthetic series as CSV"))
    common(sub.add_parser("train", help="train one model per seed"))

    p = sub.add_parser("evaluate", help="metrics of each checkpoint on a split")
    common(p, run=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))

    p = sub.add_parser("compare", help="paired t-test between two runs' per-seed metrics")
    common(p)
    p.add_argument("--a", required=True, help="metrics JSON of run A (from evaluate)")
    p.add_argument("--b", required=True, help="metrics JSON of run B")
    p.add_argument("--metric", default="mse", choices=("mse", "mae", "rmse"))

    p = sub.add_parser("discover", help="match learned periods against known cycles")
    common(p, run=True)
    p.add_argument("--delta", type=float, default=None, help="match threshold (default: config delta)")

    p = sub.add_parser("attribute", help="export per-frequency attributions of one window")
    common(p, checkpoint=True)
    p.add_argument("--index", type=int, required=True, help="window index within the split")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))

    p = sub.add_parser("faithfulness", help="perturbation test of attribution faithfulness")
    common(p, checkpoint=True)
    p.add_argument("--topk", type=int, default=None, help="single removal size overriding the config list")

    p = sub.add_parser("verify-axioms", help="check the attribution axioms and the Shapley oracle")
    common(p, checkpoint=False)

    return parser


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "discover": cmd_discover,
    "attribute": cmd_attribute,
    "faithfulness": cmd_faithfulness,
    "verify-axioms": cmd_verify_axioms,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RuntimeError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
