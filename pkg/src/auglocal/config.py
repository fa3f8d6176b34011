"""Experiment configuration and the experiment runner.

Configs are nested-section key-value text with an explicit format version.
Parsing is fail-closed: unknown sections or keys are errors, and the seed
is mandatory, so a typo can never silently change an experiment.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as datamod
from .auxbuild import plan_all, emit_plan_text
from .errors import ConfigError, DataError
from .netspec import (
    PrimaryNetworkSpec,
    ValidatedNetwork,
    _parse_sections,
    parse_network_text,
    preset,
    validate,
)
from .trainer import TrainConfig, save_checkpoint, train

_FORMAT = "experiment/1"


def _to_bool(s: str) -> bool:
    if s not in ("true", "false"):
        raise ConfigError(f"expected true/false, got {s!r}")
    return s == "true"


_SCHEMA: dict[str, dict[str, type | object]] = {
    "experiment": {"seed": int},
    "network": {"preset": str, "spec_file": str},
    "train": {
        "mode": str, "strategy": str, "d": int, "d_min": int, "tau": float,
        "lr": float, "momentum": float, "weight_decay": float,
        "epochs": int, "batch_size": int, "update_after_forward": _to_bool,
    },
    "data": {
        "kind": str,
        # synthetic-gaussians
        "classes": int, "n_per_class": int, "test_per_class": int,
        "separation": float, "seed": int,
        # cifar10-binary
        "train_files": str, "test_files": str,
        "normalize_mean": str, "normalize_std": str,
        # mnist-idx
        "train_images": str, "train_labels": str,
        "test_images": str, "test_labels": str, "limit": int,
    },
    "analysis": {"cka_reference": str, "probe_layers": str},
}


@dataclass
class ExperimentConfig:
    seed: int
    network: PrimaryNetworkSpec
    train: TrainConfig
    data: dict
    analysis: dict = field(default_factory=dict)
    raw_text: str = ""
    preset_name: str | None = None
    network_text: str | None = None   # network document when loaded from a file

    def validated_network(self) -> ValidatedNetwork:
        return validate(self.network)


def emit_experiment_text(cfg: ExperimentConfig, spec_file: str = "network.net") -> str:
    """Canonical config text reflecting the effective settings (including
    any command-line overrides), so a run directory is self-describing."""
    lines = [f"format = {_FORMAT}", "[experiment]", f"seed = {cfg.seed}", "[network]"]
    if cfg.preset_name is not None:
        lines.append(f"preset = {cfg.preset_name}")
    else:
        lines.append(f"spec_file = {spec_file}")
    t = cfg.train
    lines += ["[train]", f"mode = {t.mode}", f"strategy = {t.strategy}",
              f"d = {t.d}", f"d_min = {t.d_min}", f"tau = {t.tau}",
              f"lr = {t.lr}", f"momentum = {t.momentum}",
              f"weight_decay = {t.weight_decay}", f"epochs = {t.epochs}",
              f"batch_size = {t.batch_size}",
              f"update_after_forward = {'true' if t.update_after_forward else 'false'}"]
    lines.append("[data]")
    lines += [f"{k} = {v}" for k, v in cfg.data.items()]
    if cfg.analysis:
        lines.append("[analysis]")
        lines += [f"{k} = {v}" for k, v in cfg.analysis.items()]
    return "\n".join(lines) + "\n"


def parse_experiment_text(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    sections = _parse_sections(text)
    head = sections[0][1]
    if head.get("format") != _FORMAT:
        raise ConfigError(f"unsupported config format: {head.get('format')!r}")
    parsed: dict[str, dict] = {}
    for name, kv in sections[1:]:
        if name not in _SCHEMA:
            raise ConfigError(f"unknown section [{name}]")
        if name in parsed:
            raise ConfigError(f"duplicate section [{name}]")
        schema = _SCHEMA[name]
        out = {}
        for key, raw in kv.items():
            if key not in schema:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            try:
                out[key] = schema[key](raw)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad value for {name}.{key}: {raw!r}") from exc
        parsed[name] = out

    exp = parsed.get("experiment", {})
    if "seed" not in exp:
        raise ConfigError("experiment.seed is mandatory")
    netsec = parsed.get("network", {})
    if ("preset" in netsec) == ("spec_file" in netsec):
        raise ConfigError("network needs exactly one of 'preset' or 'spec_file'")
    preset_name = netsec.get("preset")
    network_text = None
    if "preset" in netsec:
        network = preset(netsec["preset"])
    else:
        spec_path = Path(netsec["spec_file"])
        if base_dir is not None and not spec_path.is_absolute():
            spec_path = base_dir / spec_path
        if not spec_path.exists():
            raise ConfigError(f"network spec file not found: {spec_path}")
        network_text = spec_path.read_text()
        network = parse_network_text(network_text)

    tr = parsed.get("train", {})
    train_cfg = TrainConfig(seed=exp["seed"], **tr)
    if train_cfg.mode not in ("bp", "local"):
        raise ConfigError(f"train.mode must be bp or local, got {train_cfg.mode!r}")

    dsec = parsed.get("data", {})
    if "kind" not in dsec:
        raise ConfigError("data.kind is mandatory")
    if dsec["kind"] not in ("synthetic-gaussians", "cifar10-binary", "mnist-idx"):
        raise ConfigError(f"unknown data.kind: {dsec['kind']!r}")
    return ExperimentConfig(seed=exp["seed"], network=network, train=train_cfg,
                            data=dsec, analysis=parsed.get("analysis", {}),
                            raw_text=text, preset_name=preset_name,
                            network_text=network_text)


def load_experiment(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_experiment_text(path.read_text(), base_dir=path.parent)


def _parse_triplet(s: str) -> tuple[float, float, float]:
    parts = [float(v) for v in s.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"expected three comma-separated values, got {s!r}")
    return tuple(parts)  # type: ignore[return-value]


def load_datasets(cfg: ExperimentConfig, base_dir: Path | None = None):
    """Materialize (train, test) datasets described by the config."""
    d = cfg.data
    kind = d["kind"]
    num_classes = cfg.network.num_classes
    if kind == "synthetic-gaussians":
        classes = d.get("classes", num_classes)
        if classes != num_classes:
            raise ConfigError(f"data.classes {classes} != network classes {num_classes}")
        shape = cfg.network.input_shape
        seed = d.get("seed", cfg.seed)
        sep = d.get("separation", 5.0)
        tr = datamod.gen_synthetic(classes, shape, d.get("n_per_class", 120),
                                   seed=seed, separation=sep)
        te = datamod.gen_synthetic(classes, shape, d.get("test_per_class", 40),
                                   seed=seed + 10_000, separation=sep)
        return tr, te
    if kind == "cifar10-binary":
        mean = _parse_triplet(d["normalize_mean"]) if "normalize_mean" in d else None
        std = _parse_triplet(d["normalize_std"]) if "normalize_std" in d else None

        def load_files(listing: str) -> datamod.Dataset:
            parts = []
            for rel in listing.split(","):
                p = Path(rel.strip())
                if base_dir is not None and not p.is_absolute():
                    p = base_dir / p
                if not p.exists():
                    raise DataError(f"cifar batch not found: {p}")
                parts.append(datamod.load_cifar10(p, mean, std))
            return datamod.Dataset(np.concatenate([x.images for x in parts]),
                                   np.concatenate([x.labels for x in parts]))

        return load_files(d["train_files"]), load_files(d["test_files"])
    # mnist-idx
    def resolve(key):
        p = Path(d[key])
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        return p

    tr = datamod.load_mnist_idx(resolve("train_images"), resolve("train_labels"))
    te = datamod.load_mnist_idx(resolve("test_images"), resolve("test_labels"))
    limit = d.get("limit")
    if limit:
        tr = datamod.Dataset(tr.images[:limit], tr.labels[:limit])
    return tr, te


METRICS_COLUMNS = ["epoch", "split", "loss", "top1", "lr", "wall_ms"]
METRICS_SCHEMA_VERSION = 1


def write_metrics_csv(path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for row in history:
            writer.writerow([row[c] for c in METRICS_COLUMNS])


def code_version_hash() -> str:
    """Content hash over the package sources, so a manifest pins the exact
    code that produced a result."""
    root = Path(__file__).parent
    digest = hashlib.sha256()
    for src in sorted(root.glob("*.py")):
        digest.update(src.name.encode())
        digest.update(src.read_bytes())
    return digest.hexdigest()


def run_experiment(cfg: ExperimentConfig, out_dir, base_dir: Path | None = None) -> dict:
    """Train per config and write metrics.csv, plan.txt, checkpoint, and a
    reproducibility manifest into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    network = cfg.validated_network()
    tr, te = load_datasets(cfg, base_dir)
    if tr.labels.max() >= cfg.network.num_classes:
        raise DataError("dataset has more classes than the network emits")

    plan = None
    if cfg.train.mode == "local":
        plan = plan_all(network, d=cfg.train.d, d_min=cfg.train.d_min,
                        tau=cfg.train.tau, strategy=cfg.train.strategy)
        (out / "plan.txt").write_text(emit_plan_text(plan))

    t0 = time.perf_counter()
    learner, history = train(network, cfg.train, (tr.images, tr.labels),
                             (te.images, te.labels), plan=plan)
    wall = time.perf_counter() - t0
    write_metrics_csv(out / "metrics.csv", history)
    save_checkpoint(out / "checkpoint.bin", learner)

    effective = emit_experiment_text(cfg)
    (out / "config.txt").write_text(effective)
    if cfg.network_text is not None:
        (out / "network.net").write_text(cfg.network_text)
    manifest = {
        "metrics_schema_version": METRICS_SCHEMA_VERSION,
        "config_sha256": hashlib.sha256(effective.encode()).hexdigest(),
        "code_sha256": code_version_hash(),
        "seed": cfg.seed,
        "mode": cfg.train.mode,
        "network": cfg.network.name,
        "wall_seconds": wall,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")

    final_acc = next((r["top1"] for r in reversed(history) if r["split"] == "test"),
                     float("nan"))
    return {"learner": learner, "history": history, "test_top1": final_acc,
            "out_dir": str(out)}
