"""Command-line entry point.

Subcommands: synth-gen, zeroshot, train-aug, train-probe, eval, nn-score,
run, sweep, report. Exit codes: 0 success, 2 config error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import synthworld
from .augnet import AugTrainConfig, batch_forward, load_augnet, save_augnet, train_augnet
from .embedding_store import load_bank, load_bundle, save_bank, save_bundle
from .errors import ConfigError, LadsError, NonFiniteError
from .evaluation import accuracy, evaluate_pipeline, nn_scores, per_domain_accuracy
from .experiment import (
    ExperimentConfig,
    infer_train_domain,
    run_experiment,
    sweep as run_sweep,
)
from .probe import ProbeConfig, assemble_training_set, load_probe, save_probe, train_probe
from .zeroshot import assign_domains, build_head, zero_shot_predict_batch

CONFIG_EXIT, DATA_EXIT, NUMERIC_EXIT = 2, 3, 4


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _emit(payload, out=None):
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _strict_load(path, required, optional, context):
    with open(path) as fh:
        data = json.load(fh)
    unknown = sorted(set(data) - set(required) - set(optional))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {context}")
    missing = sorted(set(required) - set(data))
    if missing:
        raise ConfigError(f"missing key(s) {missing} in {context}")
    return data


def cmd_synth_gen(args):
    config = synthworld.WorldConfig(
        dim=args.dim,
        classes=args.classes,
        domains=args.domains,
        train_domain=args.train_domain,
        class_margin=args.class_margin,
        domain_offset_scale=args.offset,
        style_scale=args.style,
        noise_sigma=args.noise,
        n_per_class_per_domain=args.n_per_class,
        seed=args.seed,
    )
    world = synthworld.generate_world(config)
    os.makedirs(args.out_dir, exist_ok=True)
    bundle_path = os.path.join(args.out_dir, "bundle.embndl")
    bank_path = os.path.join(args.out_dir, "bank.prmbnk")
    save_bundle(world.bundle, bundle_path)
    save_bank(world.bank, bank_path)
    _write_json(os.path.join(args.out_dir, "ground_truth.json"), world.truth)
    _write_json(os.path.join(args.out_dir, "summary.json"), synthworld.world_summary(world))
    print(f"wrote {bundle_path}, {bank_path} ({world.bundle.n} rows, dim {world.bundle.dim})")
    return 0


def cmd_zeroshot(args):
    bundle = load_bundle(args.bundle)
    bank = load_bank(args.bank)
    head = build_head(bank, args.mode)
    result = {"mode": args.mode, "splits": {}}
    for split in ("train", "val", "test"):
        idx = bundle.split_indices(split)
        if idx.size == 0:
            continue
        preds = zero_shot_predict_batch(head, bundle.rows64(idx))
        labels = bundle.class_labels[idx]
        entry = {"n": int(idx.size), "accuracy": accuracy(preds, labels)}
        if bundle.domain_labels is not None:
            per_dom = per_domain_accuracy(preds, labels, bundle.domain_labels[idx])
            entry["per_domain"] = {
                bundle.domain_names[d]: v for d, v in sorted(per_dom.items())
            }
        result["splits"][split] = entry
    _emit(result, args.out)
    return 0


def cmd_train_aug(args):
    data = _strict_load(
        args.config,
        required=("bundle_path", "bank_path", "out_prefix"),
        optional=("mode", "train_domain", "target_domain", "bias_candidates", "aug"),
        context="train-aug config",
    )
    bundle = load_bundle(data["bundle_path"])
    bank = load_bank(data["bank_path"])
    aug_data = data.get("aug", {})
    unknown = sorted(set(aug_data) - set(AugTrainConfig.__dataclass_fields__))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in aug config")
    config = AugTrainConfig(**aug_data)
    config.validate()

    train_idx = bundle.split_indices("train")
    rows = bundle.rows64(train_idx)
    labels = bundle.class_labels[train_idx]
    mode = data.get("mode", "standard")
    if mode == "standard":
        if "target_domain" not in data:
            raise ConfigError("standard mode needs target_domain")
        dk = bank.domain_index(data["target_domain"])
        if "train_domain" in data and data["train_domain"] is not None:
            d0 = bank.domain_index(data["train_domain"])
        else:
            stub = ExperimentConfig(bundle_path="", bank_path="", out_dir="")
            d0 = infer_train_domain(bundle, stub)
        d0_rows = np.full(len(rows), d0)
        dk_rows = np.full(len(rows), dk)
        target_name = data["target_domain"]
    elif mode == "bias":
        candidates = data.get("bias_candidates") or []
        if len(candidates) != 2:
            raise ConfigError("bias mode needs exactly 2 bias_candidates")
        cand = [bank.domain_index(name) for name in candidates]
        assigned = assign_domains(bundle, bank, cand)[train_idx]
        d0_rows = assigned
        dk_rows = np.where(assigned == cand[0], cand[1], cand[0])
        target_name = "bias"
    else:
        raise ConfigError(f"mode must be standard or bias, got {mode!r}")

    result = train_augnet(rows, labels, bank, config, d0_rows, dk_rows)
    net_path = f"{data['out_prefix']}.augnet"
    save_augnet(result.params, net_path, normalize_output=config.normalize_output,
                meta={"target": target_name})
    _write_json(f"{data['out_prefix']}.log.json",
                {"best_epoch": result.best_epoch, "history": result.history})
    print(f"wrote {net_path} (best epoch {result.best_epoch})")
    return 0


def cmd_train_probe(args):
    data = _strict_load(
        args.config,
        required=("bundle_path", "out_prefix"),
        optional=("bank_path", "augnet_paths", "probe"),
        context="train-probe config",
    )
    bundle = load_bundle(data["bundle_path"])
    probe_data = data.get("probe", {})
    unknown = sorted(set(probe_data) - set(ProbeConfig.__dataclass_fields__))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in probe config")
    config = ProbeConfig(**probe_data)
    config.validate()

    train_idx = bundle.split_indices("train")
    rows = bundle.rows64(train_idx)
    labels = bundle.class_labels[train_idx]
    nets = []
    normalize = True
    for path in data.get("augnet_paths", []):
        params, header = load_augnet(path)
        nets.append(params)
        normalize = bool(header.get("normalize_output", True))
    matrix, all_labels = assemble_training_set(rows, labels, nets, normalize)

    zs_head = None
    if config.init == "zero_shot":
        if "bank_path" not in data:
            raise ConfigError("init='zero_shot' needs bank_path")
        zs_head = build_head(load_bank(data["bank_path"]), "generic")
    probe, history = train_probe(matrix, all_labels, config,
                                 n_classes=bundle.n_classes, zs_head=zs_head)
    probe_path = f"{data['out_prefix']}.linprb"
    save_probe(probe, probe_path, meta={"init": config.init})
    _write_json(f"{data['out_prefix']}.log.json", {"history": history})
    print(f"wrote {probe_path}")
    return 0


def cmd_eval(args):
    bundle = load_bundle(args.bundle)
    if args.probe:
        model, _ = load_probe(args.probe)
    else:
        if not args.bank:
            raise ConfigError("either --probe or --bank with --zs-mode is required")
        model = build_head(load_bank(args.bank), args.zs_mode)
    train_domain = bundle.domain_names.index(args.train_domain) \
        if args.train_domain in bundle.domain_names else None
    if train_domain is None:
        raise ConfigError(
            f"train domain {args.train_domain!r} not in bundle domains {bundle.domain_names}"
        )
    report = evaluate_pipeline(model, bundle, train_domain, weight=args.weight,
                               split=args.split)
    text = report.to_json()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_nn_score(args):
    bundle = load_bundle(args.bundle)
    if bundle.domain_labels is None:
        raise ConfigError("bundle needs domain labels for nn scoring")
    train_idx = bundle.split_indices("train")
    test_idx = bundle.split_indices("test")
    rows = bundle.rows64(train_idx)
    labels = bundle.class_labels[train_idx]
    aug_blocks, target_blocks, class_blocks = [], [], []
    for path in args.augnet:
        params, header = load_augnet(path)
        normalize = bool(header.get("normalize_output", True))
        target_name = (header.get("meta") or {}).get("target", args.target_domain)
        if target_name is None:
            raise ConfigError(f"{path} lacks a target domain; pass --target-domain")
        target = bundle.domain_names.index(target_name) \
            if target_name in bundle.domain_names else None
        if target is None:
            raise ConfigError(f"target domain {target_name!r} not in bundle")
        aug_blocks.append(batch_forward(params, rows, normalize))
        target_blocks.append(np.full(len(rows), target))
        class_blocks.append(labels)
    aug_rows = np.concatenate(aug_blocks)
    sample = min(args.sample_size, len(aug_rows))
    da, cc = nn_scores(
        aug_rows,
        np.concatenate(target_blocks),
        np.concatenate(class_blocks),
        bundle.rows64(test_idx),
        bundle.domain_labels[test_idx],
        bundle.class_labels[test_idx],
        sample_size=sample,
        seed=args.seed,
    )
    _emit({"da_score": da, "cc_score": cc, "sample_size": sample}, args.out)
    return 0


def _load_experiment_config(args):
    config = ExperimentConfig.from_json(args.config)
    if args.out_dir:
        config.out_dir = args.out_dir
    if args.seeds:
        config.seeds = [int(s) for s in args.seeds.split(",") if s != ""]
    return config


def cmd_run(args):
    config = _load_experiment_config(args)
    aggregate = run_experiment(config)
    print(json.dumps(aggregate, indent=2, sort_keys=True))
    return 0


def cmd_sweep(args):
    config = _load_experiment_config(args)
    grid = {}
    if args.alpha:
        grid["alpha"] = [float(v) for v in args.alpha.split(",")]
    if args.lr:
        grid["lr"] = [float(v) for v in args.lr.split(",")]
    if args.wd:
        grid["weight_decay"] = [float(v) for v in args.wd.split(",")]
    result = run_sweep(config, grid)
    print(json.dumps({"best_index": result["best_index"],
                      "best_point": result["best_point"]}, indent=2, sort_keys=True))
    return 0


def cmd_report(args):
    from .report import render_run_report, render_sweep_report

    if args.sweep:
        written = render_sweep_report(args.run_dir, args.out_dir)
    else:
        written = render_run_report(args.run_dir, args.out_dir)
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lads",
        description="Extend an embedding-space classifier to verbally described "
                    "unseen domains via latent feature augmentation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="generate a synthetic embedding world")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--domains", type=int, default=2)
    p.add_argument("--train-domain", type=int, default=0)
    p.add_argument("--offset", type=float, default=1.0)
    p.add_argument("--style", type=float, default=1.5)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--n-per-class", type=int, default=100)
    p.add_argument("--class-margin", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("zeroshot", help="zero-shot accuracy per split and domain")
    p.add_argument("--bundle", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--mode", choices=("generic", "adaptive"), default="generic")
    p.add_argument("--out")
    p.set_defaults(func=cmd_zeroshot)

    p = sub.add_parser("train-aug", help="train an augmentation network")
    p.add_argument("--config", required=True, help="JSON job description")
    p.set_defaults(func=cmd_train_aug)

    p = sub.add_parser("train-probe", help="train the stage-2 linear probe")
    p.add_argument("--config", required=True, help="JSON job description")
    p.set_defaults(func=cmd_train_probe)

    p = sub.add_parser("eval", help="evaluate a probe or zero-shot head")
    p.add_argument("--bundle", required=True)
    p.add_argument("--probe")
    p.add_argument("--bank")
    p.add_argument("--zs-mode", choices=("generic", "adaptive"), default="generic")
    p.add_argument("--train-domain", required=True)
    p.add_argument("--weight", type=float, default=0.5)
    p.add_argument("--split", default="test")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("nn-score", help="nearest-neighbor augmentation quality")
    p.add_argument("--bundle", required=True)
    p.add_argument("--augnet", action="append", required=True)
    p.add_argument("--target-domain")
    p.add_argument("--sample-size", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_nn_score)

    p = sub.add_parser("run", help="run baselines + pipeline over seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--seeds", help="comma-separated override, e.g. 0,1,2")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="grid search over stage-1 hyperparameters")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--seeds")
    p.add_argument("--alpha", help="comma-separated values")
    p.add_argument("--lr", help="comma-separated values")
    p.add_argument("--wd", help="comma-separated values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="render figures + CSV from run artifacts")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--sweep", action="store_true", help="treat run-dir as sweep output")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return CONFIG_EXIT
    except NonFiniteError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return NUMERIC_EXIT
    except (LadsError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_EXIT


if __name__ == "__main__":
    sys.exit(main())
