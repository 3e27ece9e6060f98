"""Command-line entry points.

Subcommands: generate-data, pretrain, finetune, evaluate, sweep, plot.
Every subcommand reads a key=value experiment config (``--config``) plus
overriding flags, writes a manifest (config snapshot, seed, output hashes)
beside its outputs, and exits 0 on success or with a category-specific code
and a machine-readable ``error:<category>: message`` line on stderr.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import channel, harness, plotting, training
from .config import ConfigError, ExperimentConfig, parse_config
from .harness import (HarnessError, MissingCheckpoint, NotImplementedMethod,
                      PartialCheckpoints)
from .training import FingerprintMismatch, TrainingError

EXIT_CODES = {
    "unreadable-config": 3,
    "fingerprint-mismatch": 4,
    "missing-checkpoint": 5,
    "not-implemented": 6,
    "bad-input": 7,
    "partial-checkpoint": 8,
    "internal": 1,
}


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def _classify(exc: Exception) -> CliError:
    if isinstance(exc, CliError):
        return exc
    if isinstance(exc, ConfigError):
        return CliError("unreadable-config", str(exc))
    if isinstance(exc, FingerprintMismatch):
        return CliError("fingerprint-mismatch", str(exc))
    if isinstance(exc, PartialCheckpoints):
        return CliError("partial-checkpoint", str(exc))
    if isinstance(exc, MissingCheckpoint):
        return CliError("missing-checkpoint", str(exc))
    if isinstance(exc, NotImplementedMethod):
        return CliError("not-implemented", str(exc))
    if isinstance(exc, (HarnessError, TrainingError, channel.ChannelError,
                        FileNotFoundError)):
        return CliError("bad-input", str(exc))
    return CliError("internal", f"{type(exc).__name__}: {exc}")


def _write_manifest(path: str, config: ExperimentConfig | None, seed: int,
                    artifacts: dict[str, str]) -> None:
    lines = []
    if config is not None:
        lines.extend(f"config.{line}" for line in config.snapshot())
    lines.append(f"seed={seed}")
    for name in sorted(artifacts):
        lines.append(f"artifact.{name}.sha256={harness.sha256_file(artifacts[name])}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _load_config(args) -> ExperimentConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return parse_config(args.config, overrides=overrides,
                        paper_scale=getattr(args, "paper_scale", False))


def _cmd_generate_data(args) -> None:
    cfg = _load_config(args)
    dataset = channel.build_dataset(cfg.dataset_config())
    channel.save_dataset(dataset, args.out)
    _write_manifest(args.out + ".manifest", cfg, cfg.seed, {"dataset": args.out})
    print(f"wrote {args.out}: {len(dataset.samples)} samples, "
          f"{dataset.n_scenarios} scenarios")


def _cmd_pretrain(args) -> None:
    cfg = _load_config(args)
    dataset = channel.load_dataset(args.data)
    ck, report = training.pretrain(dataset, cfg.model_config(),
                                   cfg.train_config("pretrain"))
    training.save_checkpoint(ck, args.out)
    _write_manifest(args.out + ".manifest", cfg, cfg.seed, {"checkpoint": args.out})
    losses = ", ".join(f"{x:.4f}" for x in report.epoch_losses)
    print(f"wrote {args.out} (pretrain); epoch losses: {losses}")


def _cmd_finetune(args) -> None:
    cfg = _load_config(args)
    dataset = channel.load_dataset(args.data)
    ck = training.load_checkpoint(args.checkpoint)
    ck2, report = training.finetune(ck, dataset, cfg.model_config(),
                                    cfg.train_config("finetune"))
    training.save_checkpoint(ck2, args.out)
    _write_manifest(args.out + ".manifest", cfg, cfg.seed, {"checkpoint": args.out})
    losses = ", ".join(f"{x:.4f}" for x in report.epoch_losses)
    print(f"wrote {args.out} (finetune); epoch losses: {losses}")


def _cmd_evaluate(args) -> None:
    cfg = _load_config(args)
    dataset = channel.load_dataset(args.data)
    method = args.method
    checkpoint = training.load_checkpoint(args.checkpoint) if args.checkpoint else None
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for j in cfg.j_list:
        for snr in cfg.snr_list:
            mean, err, _ = harness.evaluate_method(method, checkpoint, dataset,
                                                   cfg, j=j, snr_db=snr)
            rows.append(harness.SweepRow(sweep_var="J", value=float(j), method=method,
                                         mean_sum_rate=mean, std_err=err,
                                         n_constellations=cfg.n_constellations,
                                         seed=cfg.seed))
            print(f"{method} J={j} SNR={snr:g} dB: {mean:.4f} +/- {err:.4f}")
    csv_path = os.path.join(args.out, f"evaluate_{method}.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(harness.SweepResult(rows=rows).to_csv())
    _write_manifest(os.path.join(args.out, "manifest.txt"), cfg, cfg.seed,
                    {"csv": csv_path})


def _parse_checkpoint_spec(spec: str | None, cfg: ExperimentConfig) -> dict:
    """'method=path,method=path' pairs, or one bare path for all learned methods."""
    if not spec:
        return {}
    out = {}
    parts = [p for p in spec.split(",") if p]
    if all("=" not in p for p in parts) and len(parts) == 1:
        for method in cfg.methods:
            known = harness.METHODS.get(method)
            if known is not None and known.needs_checkpoint:
                out[method] = parts[0]
        return out
    for part in parts:
        if "=" not in part:
            raise CliError("bad-input",
                           f"checkpoint spec '{part}' is not method=path")
        method, _, path = part.partition("=")
        out[method] = path
    return out


def _cmd_sweep(args) -> None:
    cfg = _load_config(args)
    dataset = channel.load_dataset(args.data)
    paths = _parse_checkpoint_spec(args.checkpoint, cfg)
    result = harness.run_sweep(args.axis, cfg, dataset, paths)
    os.makedirs(args.out, exist_ok=True)
    safe_axis = args.axis.replace("_", "")
    csv_path = os.path.join(args.out, f"sweep_{safe_axis}.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(result.to_csv())
    svg_path = os.path.join(args.out, f"sweep_{safe_axis}.svg")
    with open(svg_path, "w", encoding="utf-8") as fh:
        fh.write(plotting.render_sweep(result))
    _write_manifest(os.path.join(args.out, "manifest.txt"), cfg, cfg.seed,
                    {"csv": csv_path, "svg": svg_path})
    print(f"wrote {csv_path} and {svg_path} ({len(result.rows)} rows)")


def _cmd_plot(args) -> None:
    plotting.plot_csv(args.csv, args.out)
    _write_manifest(args.out + ".manifest", None, 0, {"svg": args.out})
    print(f"wrote {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vqprecode",
        description="FDD downlink simulator: learned pilots, VQ CSI feedback, "
                    "GNN precoding and WMMSE baselines")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False):
        p.add_argument("--config", required=True, help="key=value experiment config")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--paper-scale", action="store_true",
                       help="full-scale geometry and evaluation protocol")
        if data:
            p.add_argument("--data", required=True, help="dataset file")

    p = sub.add_parser("generate-data", help="generate a synthetic channel dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate_data)

    p = sub.add_parser("pretrain", help="stage 1: feedback path on the first half")
    common(p, data=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("finetune", help="stage 2: full pipeline on the second half")
    common(p, data=True)
    p.add_argument("--checkpoint", required=True, help="pretrain checkpoint")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("evaluate", help="evaluate one method over J and SNR lists")
    common(p, data=True)
    p.add_argument("--method", required=True)
    p.add_argument("--checkpoint", help="trained checkpoint for learned methods")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="sweep sum rate over J, B or n_p")
    common(p, data=True)
    p.add_argument("--axis", required=True, choices=["J", "B", "n_p"])
    p.add_argument("--checkpoint",
                   help="method=path[,method=path...] with optional {value}")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("plot", help="render a sweep CSV as SVG")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except Exception as exc:            # noqa: BLE001 - single reporting point
        err = _classify(exc)
        print(f"error:{err.category}: {err}", file=sys.stderr)
        return EXIT_CODES[err.category]
    return 0


if __name__ == "__main__":
    sys.exit(main())
