"""Experiment runner: end-to-end baselines + latent-augmentation pipeline over
seeds, deterministic artifact emission, and hyperparameter sweeps."""

from __future__ import annotations

import csv
import itertools
import json
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .augnet import AugTrainConfig, batch_forward, save_augnet, train_augnet
from .embedding_store import load_bank, load_bundle
from .errors import ConfigError
from .evaluation import class_balanced_accuracy, evaluate_pipeline, model_predictions, nn_scores
from .probe import ProbeConfig, assemble_training_set, save_probe, train_probe, wise_ensemble
from .zeroshot import assign_domains, build_head

ALL_BASELINES = ("zs_generic", "zs_adaptive", "lp", "lp_zs_init", "wise", "lads")
MODES = ("standard", "bias")

SCALAR_METRICS = (
    "id_acc",
    "ood_acc",
    "extended_acc",
    "balanced_acc",
    "da_score",
    "cc_score",
    "val_balanced_acc",
)

# role tags for deriving per-stage seeds from the experiment seed
_ROLE_AUG, _ROLE_PROBE, _ROLE_NN = 1, 2, 3
_PROBE_VARIANTS = {"lp": 0, "lp_zs_init": 1, "lads": 2}


def derive_seed(*keys) -> int:
    """Stable sub-seed from integer keys (experiment seed, role, index)."""
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


def _strict_fields(cls, data, context):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {context}")


def _build(cls, data, context):
    _strict_fields(cls, data, context)
    return cls(**data)


@dataclass
class ExperimentConfig:
    bundle_path: str
    bank_path: str
    out_dir: str
    mode: str = "standard"
    train_domain: str | None = None      # name; inferred from the train split if None
    unseen_domains: list[str] = field(default_factory=list)   # standard mode
    bias_candidates: list[str] = field(default_factory=list)  # bias mode, exactly 2
    baselines: list[str] = field(default_factory=lambda: list(ALL_BASELINES))
    seeds: list[int] = field(default_factory=lambda: [0])
    extended_weight: float = 0.5
    wise_mix: float = 0.5
    nn_sample_size: int = 1000
    aug: AugTrainConfig = field(default_factory=AugTrainConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)

    @classmethod
    def from_dict(cls, data) -> "ExperimentConfig":
        data = dict(data)
        _strict_fields(cls, data, "experiment config")
        if "aug" in data:
            data["aug"] = _build(AugTrainConfig, data["aug"], "aug config")
        if "probe" in data:
            data["probe"] = _build(ProbeConfig, data["probe"], "probe config")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        for b in self.baselines:
            if b not in ALL_BASELINES:
                raise ConfigError(f"unknown baseline {b!r} (known: {ALL_BASELINES})")
        if not 0.0 <= self.extended_weight <= 1.0:
            raise ConfigError("extended_weight must be in [0, 1]")
        if not 0.0 <= self.wise_mix <= 1.0:
            raise ConfigError("wise_mix must be in [0, 1]")
        if self.nn_sample_size < 1:
            raise ConfigError("nn_sample_size must be >= 1")
        if self.mode == "standard" and "lads" in self.baselines and not self.unseen_domains:
            raise ConfigError("standard mode needs unseen_domains for the lads run")
        if self.mode == "bias" and "lads" in self.baselines and len(self.bias_candidates) != 2:
            raise ConfigError("bias mode needs exactly 2 bias_candidates")
        self.aug.validate()
        self.probe.validate()

    def to_resolved_dict(self):
        out = asdict(self)
        return out


def infer_train_domain(bundle, config) -> int:
    """Resolve the training-domain index from the config or the train split."""
    if config.train_domain is not None:
        try:
            return bundle.domain_names.index(config.train_domain)
        except ValueError:
            raise ConfigError(
                f"train_domain {config.train_domain!r} not in bundle domains "
                f"{bundle.domain_names}"
            )
    if bundle.domain_labels is None:
        raise ConfigError("bundle has no domain labels; set train_domain explicitly")
    train_idx = bundle.split_indices("train")
    present = np.unique(bundle.domain_labels[train_idx])
    if len(present) != 1:
        raise ConfigError(
            f"train split spans domains {present.tolist()}; set train_domain explicitly"
        )
    return int(present[0])


def _domain_indices(bundle, names, what):
    out = []
    for name in names:
        try:
            out.append(bundle.domain_names.index(name))
        except ValueError:
            raise ConfigError(f"{what} {name!r} not in bundle domains {bundle.domain_names}")
    return out


def _val_balanced(model, bundle) -> float | None:
    idx = bundle.split_indices("val")
    if idx.size == 0:
        return None
    preds = model_predictions(model, bundle.rows64(idx))
    value, _ = class_balanced_accuracy(preds, bundle.class_labels[idx], bundle.n_classes)
    return value


def _train_lads_nets(bundle, bank, config, train_domain, seed, out=None):
    """Stage 1 for one experiment seed. Returns (nets, per-net target arrays).

    standard mode: one net per unseen domain, every row mapped toward it.
    bias mode: one net; each row starts at its zero-shot-assigned candidate
    domain and targets the other candidate.
    """
    train_idx = bundle.split_indices("train")
    rows = bundle.rows64(train_idx)
    labels = bundle.class_labels[train_idx]
    n = len(train_idx)
    jobs = []
    if config.mode == "standard":
        for k, name in enumerate(config.unseen_domains):
            dk = bundle.domain_names.index(name) if name in bundle.domain_names else None
            if dk is None:
                raise ConfigError(f"unseen domain {name!r} not in bundle")
            d0 = np.full(n, train_domain)
            jobs.append((name, d0, np.full(n, dk)))
    else:
        cand = _domain_indices(bundle, config.bias_candidates, "bias candidate")
        assigned_all = assign_domains(bundle, bank, cand)
        assigned = assigned_all[train_idx]
        other = np.where(assigned == cand[0], cand[1], cand[0])
        jobs.append(("bias", assigned, other))

    nets, targets = [], []
    for j, (name, d0, dk) in enumerate(jobs):
        aug_cfg = AugTrainConfig(**{**asdict(config.aug), "seed": derive_seed(seed, _ROLE_AUG, j)})
        result = train_augnet(rows, labels, bank, aug_cfg, d0, dk)
        nets.append(result.params)
        targets.append(dk)
        if out is not None:
            save_augnet(
                result.params,
                os.path.join(out, f"augnet_{name}.augnet"),
                normalize_output=config.aug.normalize_output,
                meta={"target": name, "seed": seed},
            )
            _write_json(
                os.path.join(out, f"augnet_{name}.log.json"),
                {"best_epoch": result.best_epoch, "history": result.history},
            )
    return nets, targets


def run_seed(bundle, bank, config: ExperimentConfig, seed: int, out=None) -> dict:
    """All requested baselines for one seed; returns method -> result record."""
    train_domain = infer_train_domain(bundle, config)
    train_idx = bundle.split_indices("train")
    rows = bundle.rows64(train_idx)
    labels = bundle.class_labels[train_idx]
    test_idx = bundle.split_indices("test")
    weight = config.extended_weight

    requested = list(config.baselines)
    results = {}
    generic_head = build_head(bank, "generic")

    def record(method, model, da=None, cc=None):
        report = evaluate_pipeline(
            model, bundle, train_domain, weight=weight, da_score=da, cc_score=cc
        )
        results[method] = {
            "method": method,
            "seed": seed,
            "val_balanced_acc": _val_balanced(model, bundle),
            "report": report.to_dict(),
        }

    if "zs_generic" in requested:
        record("zs_generic", generic_head)
    if "zs_adaptive" in requested:
        record("zs_adaptive", build_head(bank, "adaptive"))

    lp_probe = None
    if "lp" in requested or "wise" in requested:
        cfg = ProbeConfig(**{**asdict(config.probe),
                             "init": "zeros",
                             "seed": derive_seed(seed, _ROLE_PROBE, _PROBE_VARIANTS["lp"])})
        lp_probe, lp_hist = train_probe(rows, labels, cfg, n_classes=bundle.n_classes)
        if out is not None:
            save_probe(lp_probe, os.path.join(out, "probe_lp.linprb"), meta={"method": "lp"})
            _write_json(os.path.join(out, "probe_lp.log.json"), {"history": lp_hist})
    if "lp" in requested:
        record("lp", lp_probe)

    if "lp_zs_init" in requested:
        cfg = ProbeConfig(**{**asdict(config.probe),
                             "init": "zero_shot",
                             "seed": derive_seed(seed, _ROLE_PROBE, _PROBE_VARIANTS["lp_zs_init"])})
        zs_probe, hist = train_probe(
            rows, labels, cfg, n_classes=bundle.n_classes, zs_head=generic_head
        )
        if out is not None:
            save_probe(zs_probe, os.path.join(out, "probe_lp_zs_init.linprb"),
                       meta={"method": "lp_zs_init"})
            _write_json(os.path.join(out, "probe_lp_zs_init.log.json"), {"history": hist})
        record("lp_zs_init", zs_probe)

    if "wise" in requested:
        record("wise", wise_ensemble(lp_probe, generic_head, config.wise_mix))

    if "lads" in requested:
        nets, targets = _train_lads_nets(bundle, bank, config, train_domain, seed, out)
        matrix, aug_labels = assemble_training_set(
            rows, labels, nets, normalize_output=config.aug.normalize_output
        )
        cfg = ProbeConfig(**{**asdict(config.probe),
                             "seed": derive_seed(seed, _ROLE_PROBE, _PROBE_VARIANTS["lads"])})
        zs_head = generic_head if cfg.init == "zero_shot" else None
        lads_probe, hist = train_probe(
            matrix, aug_labels, cfg, n_classes=bundle.n_classes, zs_head=zs_head
        )
        if out is not None:
            save_probe(lads_probe, os.path.join(out, "probe_lads.linprb"),
                       meta={"method": "lads"})
            _write_json(os.path.join(out, "probe_lads.log.json"), {"history": hist})

        aug_rows = np.concatenate(
            [batch_forward(net, rows, config.aug.normalize_output) for net in nets]
        )
        aug_targets = np.concatenate(targets)
        aug_classes = np.concatenate([labels] * len(nets))
        da = cc = None
        if test_idx.size and bundle.domain_labels is not None:
            sample = min(config.nn_sample_size, len(aug_rows))
            da, cc = nn_scores(
                aug_rows, aug_targets, aug_classes,
                bundle.rows64(test_idx),
                bundle.domain_labels[test_idx],
                bundle.class_labels[test_idx],
                sample_size=sample,
                seed=derive_seed(seed, _ROLE_NN, 0),
            )
        record("lads", lads_probe, da=da, cc=cc)

    return results


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _collect_metric(record, metric):
    if metric == "val_balanced_acc":
        return record["val_balanced_acc"]
    return record["report"].get(metric)


def aggregate_runs(per_seed: dict[int, dict]) -> dict:
    """mean/std (population) per method per metric across seeds."""
    methods = sorted({m for run in per_seed.values() for m in run})
    out = {}
    for method in methods:
        entry = {"n_seeds": 0}
        values = {metric: [] for metric in SCALAR_METRICS}
        for seed in sorted(per_seed):
            record = per_seed[seed].get(method)
            if record is None:
                continue
            entry["n_seeds"] += 1
            for metric in SCALAR_METRICS:
                v = _collect_metric(record, metric)
                if v is not None:
                    values[metric].append(float(v))
        for metric, vals in values.items():
            if vals:
                entry[f"{metric}_mean"] = float(np.mean(vals))
                entry[f"{metric}_std"] = float(np.std(vals))
        out[method] = entry
    return out


def write_aggregate_csv(path, aggregate):
    cols = ["method"]
    for metric in SCALAR_METRICS:
        cols += [f"{metric}_mean", f"{metric}_std"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for method in sorted(aggregate):
            row = [method]
            for col in cols[1:]:
                v = aggregate[method].get(col)
                row.append("" if v is None else f"{v:.6f}")
            writer.writerow(row)


def run_experiment(config: ExperimentConfig) -> dict:
    """Run every requested baseline for every seed and write all artifacts.

    Emits per-seed EvalReports, parameter files, training logs, the resolved
    config, and an aggregate JSON/CSV with mean and std per method/metric.
    Reruns with identical config produce byte-identical outputs.
    """
    config.validate()
    bundle = load_bundle(config.bundle_path)
    bank = load_bank(config.bank_path)
    if bundle.dim != bank.dim:
        raise ConfigError(f"bundle dim {bundle.dim} != bank dim {bank.dim}")
    os.makedirs(config.out_dir, exist_ok=True)
    _write_json(os.path.join(config.out_dir, "resolved_config.json"),
                config.to_resolved_dict())

    per_seed = {}
    for seed in config.seeds:
        seed_dir = os.path.join(config.out_dir, f"seed_{seed}")
        os.makedirs(seed_dir, exist_ok=True)
        results = run_seed(bundle, bank, config, seed, out=seed_dir)
        for method, record in results.items():
            _write_json(os.path.join(seed_dir, f"{method}.json"), record)
        per_seed[seed] = results

    aggregate = aggregate_runs(per_seed)
    _write_json(os.path.join(config.out_dir, "aggregate.json"), aggregate)
    write_aggregate_csv(os.path.join(config.out_dir, "aggregate.csv"), aggregate)
    return aggregate


GRID_FIELDS = ("alpha", "lr", "weight_decay")


def sweep(config: ExperimentConfig, grid: dict) -> dict:
    """Grid search over stage-1 alpha / lr / weight decay.

    Each grid point runs the latent-augmentation pipeline over all seeds in a
    subdirectory; the winner maximizes mean class-balanced validation
    accuracy. Returns the sweep table (also written as sweep.json/sweep.csv).
    """
    config.validate()
    unknown = sorted(set(grid) - set(GRID_FIELDS))
    if unknown:
        raise ConfigError(f"unknown sweep field(s) {unknown}; supported: {GRID_FIELDS}")
    axes = [(name, list(grid[name])) for name in GRID_FIELDS if name in grid]
    if not axes or any(len(v) == 0 for _, v in axes):
        raise ConfigError("sweep grid must be nonempty")

    os.makedirs(config.out_dir, exist_ok=True)
    points = list(itertools.product(*(vals for _, vals in axes)))
    names = [name for name, _ in axes]
    table = []
    for i, point in enumerate(points):
        overrides = dict(zip(names, point))
        aug = AugTrainConfig(**{**asdict(config.aug), **overrides})
        sub = ExperimentConfig(
            **{
                **asdict(config),
                "aug": aug,
                "probe": ProbeConfig(**asdict(config.probe)),
                "baselines": ["lads"],
                "out_dir": os.path.join(config.out_dir, f"point_{i}"),
            }
        )
        aggregate = run_experiment(sub)
        lads = aggregate["lads"]
        entry = {"index": i, **overrides}
        for metric in SCALAR_METRICS:
            key = f"{metric}_mean"
            if key in lads:
                entry[key] = lads[key]
                entry[f"{metric}_std"] = lads[f"{metric}_std"]
        table.append(entry)

    best_index = int(
        np.argmax([entry.get("val_balanced_acc_mean", -np.inf) for entry in table])
    )
    result = {"grid_fields": names, "table": table, "best_index": best_index,
              "best_point": {name: table[best_index][name] for name in names}}
    _write_json(os.path.join(config.out_dir, "sweep.json"), result)
    _write_sweep_csv(os.path.join(config.out_dir, "sweep.csv"), names, table)
    return result


def _write_sweep_csv(path, names, table):
    metric_cols = []
    for metric in SCALAR_METRICS:
        metric_cols += [f"{metric}_mean", f"{metric}_std"]
    cols = ["index"] + names + metric_cols
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for entry in table:
            row = []
            for col in cols:
                v = entry.get(col)
                if isinstance(v, float):
                    row.append(f"{v:.6f}")
                else:
                    row.append("" if v is None else v)
            writer.writerow(row)
