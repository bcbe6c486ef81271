"""Experiment runner CLI.

Four subcommands drive the simulator and emit machine-readable
artifacts plus static charts:

* ``simulate``    row-norm benchmark -> metrics.csv, trace.csv
* ``noise-sweep`` final alignment vs flip ratio -> noise.csv, fig_noise.svg
* ``adaptive``    row-norm vs cosine-subsampling panels ->
                  trace_adaptive.csv, fig_alignment.svg
* ``decay-demo``  influence decay under per-step normalization -> decay.csv

Every command writes a ``manifest.json`` listing the emitted files with
git-style content hashes; given identical inputs a rerun overwrites
every artifact byte-for-byte.  Config files are flat INI; unknown keys
are hard errors with the offending line number.

Exit codes: 0 success, 2 config validation, 3 runtime invariant
violation, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .core import HyperParams
from .simulator import (
    ConfigValidationError,
    ExperimentResult,
    InvariantViolation,
    NoiseSweepResult,
    SimConfig,
    noise_sweep,
    run_experiment,
)
from .updaters import MethodKind, UpdateMethod, decay_measurement

__all__ = ["ConfigError", "load_config", "main"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3
EXIT_IO = 4


class ConfigError(Exception):
    """Config file problem, anchored to a file location when possible."""


# ------------------------------------------------------------ config file

_BOOL_VALUES = {
    "true": True, "yes": True, "1": True,
    "false": False, "no": False, "0": False,
}

_METHOD_BUILDERS = {
    "tk": MethodKind.TK,
    "block-tk": MethodKind.BLOCK_TK,
    "block-nk": MethodKind.BLOCK_NK,
    "nk": MethodKind.NK,
    "k-nonorm": MethodKind.K_NONORM,
    "ogd": MethodKind.OGD,
}

_SIM_KEYS = {
    "population": int,
    "active_users": int,
    "dimension": int,
    "sessions": int,
    "swipes_per_session": int,
    "master_seed": int,
    "theta": float,
    "p_flip": float,
    "label_rule": str,
    "sampling": str,
    "init": str,
    "cooldown_enabled": bool,
    "cooldown_window": int,
    "adaptive_pool": int,
    "adaptive_keep": int,
    "drop_satisfied_rows": bool,
}

_HYPER_KEYS = {
    "alpha": float,
    "eta_nk": float,
    "eta_ogd": float,
    "theta": float,
    "delta": float,
    "block_k": int,
}

_KNOWN_SECTIONS = {
    "simulation": _SIM_KEYS,
    "hyperparams": _HYPER_KEYS,
    "methods": {"include": str},
    "noise": {"flips": str},
}


def _line_of(text: str, section: str, key: Optional[str]) -> int:
    """Best-effort line anchor for a section header or a key inside it."""
    lines = text.splitlines()
    in_section = False
    for i, line in enumerate(lines, start=1):
        stripped = line.strip()
        if stripped.startswith("["):
            if key is None and stripped.lower() == f"[{section.lower()}]":
                return i
            in_section = stripped.lower() == f"[{section.lower()}]"
        elif in_section and key is not None:
            head = stripped.split("=", 1)[0].split(":", 1)[0].strip().lower()
            if head == key.lower():
                return i
    return 0


def _convert(raw: str, kind, where: str):
    raw = raw.strip()
    try:
        if kind is bool:
            try:
                return _BOOL_VALUES[raw.lower()]
            except KeyError:
                raise ValueError(f"expected a boolean, got {raw!r}")
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _parse_methods(
    names_raw: str, hyper: Dict[str, float], where: str
) -> Tuple[UpdateMethod, ...]:
    shared = dict(
        alpha=hyper["alpha"],
        theta=hyper["theta"],
        delta=hyper["delta"],
        block_k=hyper["block_k"],
    )
    methods = []
    for token in names_raw.split(","):
        name = token.strip().lower()
        if not name:
            continue
        if name not in _METHOD_BUILDERS:
            raise ConfigError(
                f"{where}: unknown method {token.strip()!r} "
                f"(choose from {sorted(_METHOD_BUILDERS)})"
            )
        kind = _METHOD_BUILDERS[name]
        eta = hyper["eta_ogd"] if kind is MethodKind.OGD else hyper["eta_nk"]
        try:
            methods.append(UpdateMethod(kind, HyperParams(eta=eta, **shared)))
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
    if not methods:
        raise ConfigError(f"{where}: no methods selected")
    return tuple(methods)


def load_config(path: Optional[str]) -> SimConfig:
    """Build a SimConfig from an INI file (defaults when path is None)."""
    if path is None:
        return SimConfig()
    file = Path(path)
    try:
        text = file.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from None

    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";")
    )
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None

    sim_kwargs: Dict = {}
    hyper = {"alpha": 1.0, "eta_nk": 0.5, "eta_ogd": 0.1,
             "theta": 0.52, "delta": 0.05, "block_k": 32}
    methods_raw = None
    flips_raw = None

    for section in parser.sections():
        sec = section.lower()
        if sec not in _KNOWN_SECTIONS:
            raise ConfigError(
                f"{path}:{_line_of(text, section, None)}: unknown section [{section}]"
            )
        known = _KNOWN_SECTIONS[sec]
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(
                    f"{path}:{_line_of(text, section, key)}: unknown key "
                    f"{key!r} in [{section}]"
                )
            where = f"{path}:{_line_of(text, section, key)}"
            if sec == "simulation":
                sim_kwargs[key] = _convert(raw, known[key], where)
            elif sec == "hyperparams":
                hyper[key] = _convert(raw, known[key], where)
            elif sec == "methods":
                methods_raw = (raw, where)
            else:  # noise
                flips_raw = (raw, where)

    if methods_raw is not None:
        sim_kwargs["methods"] = _parse_methods(methods_raw[0], hyper, methods_raw[1])
    else:
        sim_kwargs["methods"] = _parse_methods(
            "tk, block-tk, block-nk, nk, k-nonorm, ogd", hyper, str(path)
        )
    if "theta" not in sim_kwargs:
        sim_kwargs["theta"] = hyper["theta"]
    if flips_raw is not None:
        raw, where = flips_raw
        try:
            flips = tuple(float(tok) for tok in raw.split(",") if tok.strip())
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        if not flips:
            raise ConfigError(f"{where}: empty flip list")
        sim_kwargs["noise_flips"] = flips
    try:
        return SimConfig(**sim_kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _apply_overrides(config: SimConfig, args: argparse.Namespace) -> SimConfig:
    updates: Dict = {}
    if args.seed is not None:
        updates["master_seed"] = args.seed
    if getattr(args, "label_rule", None):
        updates["label_rule"] = args.label_rule
    if getattr(args, "sampling", None):
        updates["sampling"] = args.sampling
    if getattr(args, "no_cooldown", False):
        updates["cooldown_enabled"] = False
    return replace(config, **updates) if updates else config


# -------------------------------------------------------------- artifacts

def _fmt(value, float_format: str = ".6f") -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), float_format)
    return str(value)


def _write_csv(
    path: Path, header: Sequence[str], rows, float_format: str = ".6f"
) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v, float_format) for v in row) + "\n")


def _git_blob_sha1(data: bytes) -> str:
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


def _config_snapshot(config: SimConfig) -> Dict:
    return {
        "population": config.population,
        "active_users": config.active_users,
        "dimension": config.dimension,
        "sessions": config.sessions,
        "swipes_per_session": config.swipes_per_session,
        "theta": config.theta,
        "p_flip": config.p_flip,
        "label_rule": config.label_rule,
        "sampling": config.sampling,
        "adaptive_pool": config.adaptive_pool,
        "adaptive_keep": config.adaptive_keep,
        "init": config.init,
        "cooldown_enabled": config.cooldown_enabled,
        "cooldown_window": config.cooldown_window,
        "drop_satisfied_rows": config.drop_satisfied_rows,
        "noise_flips": list(config.noise_flips),
        "methods": [
            {
                "name": m.name,
                "kind": m.kind.value,
                "alpha": m.params.alpha,
                "eta": m.params.eta,
                "theta": m.params.theta,
                "delta": m.params.delta,
                "block_k": m.params.block_k,
            }
            for m in config.methods
        ],
    }


def _write_manifest(
    out: Path,
    command: str,
    master_seed: int,
    snapshot: Dict,
    artifacts: List[Path],
) -> None:
    manifest = {
        "command": command,
        "master_seed": master_seed,
        "config": snapshot,
        "outputs": {
            p.name: _git_blob_sha1(p.read_bytes()) for p in sorted(artifacts)
        },
        "versions": {"kaczpref": __version__, "numpy": np.__version__},
    }
    data = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    (out / "manifest.json").write_text(data, encoding="utf-8", newline="\n")


# ---------------------------------------------------------------- figures

def _setup_matplotlib():
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "kaczpref"
    import matplotlib.pyplot as plt

    return plt


def _thin(n: int, limit: int = 640) -> np.ndarray:
    step = max(1, n // limit)
    idx = np.arange(0, n, step)
    if idx[-1] != n - 1:
        idx = np.append(idx, n - 1)
    return idx


def _plot_trace_panel(ax, result: ExperimentResult, title: str) -> None:
    for name, m in result.metrics.items():
        t = np.arange(1, m.alignment_trace.size + 1)
        idx = _thin(t.size)
        ax.plot(t[idx], m.alignment_trace[idx], label=name, linewidth=1.2)
        ax.fill_between(
            t[idx],
            (m.alignment_trace - m.alignment_std)[idx],
            (m.alignment_trace + m.alignment_std)[idx],
            alpha=0.12,
        )
        ax.annotate(
            f"{m.final_alignment:.3f}",
            (t[-1], m.alignment_trace[-1]),
            fontsize=7,
            xytext=(2, 0),
            textcoords="offset points",
        )
    ax.set_xlabel("swipe")
    ax.set_ylabel("mean alignment with target")
    ax.set_title(title)
    ax.legend(fontsize=8)


def _write_alignment_figure(
    path: Path, row_result: ExperimentResult, adaptive_result: ExperimentResult
) -> None:
    plt = _setup_matplotlib()
    fig, axes = plt.subplots(1, 2, figsize=(11, 4.2), sharey=True)
    _plot_trace_panel(axes[0], row_result, "row-norm sampling")
    _plot_trace_panel(axes[1], adaptive_result, "two-stage cosine subsampling")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _write_noise_figure(path: Path, sweep: NoiseSweepResult) -> None:
    plt = _setup_matplotlib()
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for name, points in sweep.curves.items():
        ps = np.array([p for p, _, _ in points])
        means = np.array([m for _, m, _ in points])
        stds = np.array([s for _, _, s in points])
        ax.plot(ps, means, marker="o", markersize=3, linewidth=1.2, label=name)
        ax.fill_between(ps, means - stds, means + stds, alpha=0.12)
        for p, m in zip(ps, means):
            ax.annotate(
                f"{m:.2f}", (p, m), fontsize=6, xytext=(0, 4),
                textcoords="offset points", ha="center",
            )
    ax.set_xlabel("label flip ratio")
    ax.set_ylabel("final alignment with target")
    ax.set_title("noise robustness")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# ---------------------------------------------------------------- commands

def _metrics_rows(result: ExperimentResult):
    for name, m in result.metrics.items():
        yield (
            name,
            m.like_rate,
            m.align_at_20,
            m.direction_stability,
            m.final_alignment,
        )


def _trace_rows(result: ExperimentResult):
    for name, m in result.metrics.items():
        for t in range(m.alignment_trace.size):
            yield (name, t + 1, m.alignment_trace[t], m.alignment_std[t])


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _apply_overrides(load_config(args.config), args)
    result = run_experiment(config, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.csv"
    trace_path = out / "trace.csv"
    _write_csv(
        metrics_path,
        ["method", "like_rate", "align_at_20", "direction_stability",
         "final_alignment"],
        _metrics_rows(result),
    )
    _write_csv(
        trace_path,
        ["method", "swipe", "mean_alignment", "std_alignment"],
        _trace_rows(result),
    )
    _write_manifest(
        out, "simulate", config.master_seed, _config_snapshot(config),
        [metrics_path, trace_path],
    )
    return EXIT_OK


def cmd_noise_sweep(args: argparse.Namespace) -> int:
    config = _apply_overrides(load_config(args.config), args)
    sweep = noise_sweep(config, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    noise_path = out / "noise.csv"
    rows = [
        (name, p, mean, std)
        for name, points in sweep.curves.items()
        for p, mean, std in points
    ]
    _write_csv(
        noise_path, ["method", "p_flip", "mean_final_alignment", "std"], rows
    )
    fig_path = out / "fig_noise.svg"
    _write_noise_figure(fig_path, sweep)
    _write_manifest(
        out, "noise-sweep", config.master_seed, _config_snapshot(config),
        [noise_path, fig_path],
    )
    return EXIT_OK


def cmd_adaptive(args: argparse.Namespace) -> int:
    base = _apply_overrides(load_config(args.config), args)
    row_config = replace(base, sampling="row-norm")
    adaptive_config = row_config.adaptive_variant()
    if args.label_rule:
        adaptive_config = replace(adaptive_config, label_rule=args.label_rule)
    row_result = run_experiment(row_config, workers=args.workers)
    adaptive_result = run_experiment(adaptive_config, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace_path = out / "trace_adaptive.csv"
    _write_csv(
        trace_path,
        ["method", "swipe", "mean_alignment", "std_alignment"],
        _trace_rows(adaptive_result),
    )
    fig_path = out / "fig_alignment.svg"
    _write_alignment_figure(fig_path, row_result, adaptive_result)
    snapshot = {
        "row_norm_panel": _config_snapshot(row_config),
        "adaptive_panel": _config_snapshot(adaptive_config),
    }
    _write_manifest(
        out, "adaptive", adaptive_config.master_seed, snapshot,
        [trace_path, fig_path],
    )
    return EXIT_OK


def cmd_decay_demo(args: argparse.Namespace) -> int:
    try:
        measurement = decay_measurement(args.eta, args.steps, dim=args.dim)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    decay_path = out / "decay.csv"
    rows = [
        (t, measurement.weights[t], measurement.eta_envelope[t],
         measurement.contraction_envelope[t])
        for t in range(measurement.weights.size)
    ]
    # scientific notation: the envelope spans many decades
    _write_csv(
        decay_path,
        ["step", "measured_weight", "eta_pow_envelope",
         "contraction_product_envelope"],
        rows,
        float_format=".6e",
    )
    snapshot = {"eta": args.eta, "steps": args.steps, "dim": args.dim}
    _write_manifest(
        out, "decay-demo", args.seed if args.seed is not None else 42,
        snapshot, [decay_path],
    )
    return EXIT_OK


# -------------------------------------------------------------- interface

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kaczpref",
        description="Preference-learning benchmark runner",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config_flag=True):
        if config_flag:
            p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="master seed (default 42)")
        p.add_argument("--workers", type=int, default=1,
                       help="parallel workers; output is worker-independent")

    sim = sub.add_parser("simulate", help="row-norm benchmark run")
    add_common(sim)
    sim.add_argument("--label-rule", choices=["raw-dot", "normalized-cos"])
    sim.add_argument("--sampling", choices=["row-norm", "adaptive"])
    sim.add_argument("--no-cooldown", action="store_true")
    sim.set_defaults(func=cmd_simulate)

    sweep = sub.add_parser("noise-sweep", help="final alignment vs flip ratio")
    add_common(sweep)
    sweep.add_argument("--label-rule", choices=["raw-dot", "normalized-cos"])
    sweep.add_argument("--sampling", choices=["row-norm", "adaptive"])
    sweep.add_argument("--no-cooldown", action="store_true")
    sweep.set_defaults(func=cmd_noise_sweep)

    ad = sub.add_parser("adaptive", help="row-norm vs cosine-subsampling panels")
    add_common(ad)
    ad.add_argument("--label-rule", choices=["raw-dot", "normalized-cos"])
    ad.add_argument("--no-cooldown", action="store_true")
    ad.set_defaults(func=cmd_adaptive)

    decay = sub.add_parser("decay-demo", help="influence decay measurement")
    decay.add_argument("--eta", type=float, default=0.5)
    decay.add_argument("--steps", type=int, default=20)
    decay.add_argument("--dim", type=int, default=60)
    decay.add_argument("--out", required=True)
    decay.add_argument("--seed", type=int, default=None)
    decay.set_defaults(func=cmd_decay_demo)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ConfigValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
