"""Acceptance suite: the six binding criteria, one test per criterion.

Each test prints a `[criterion N] PASS/FAIL` line; run with `pytest -s` to
see them live. The synthetic-world thresholds in criteria 3 and 4 were
frozen after oracle runs of the full pipeline (see the run configs below).
"""

import json
import os
import time

import numpy as np
import pytest

from lads.augnet import AugTrainConfig, init_params, lads_grad, lads_loss
from lads.cli import main as cli_main
from lads.embedding_store import PromptBank, normalize_rows, save_bank, save_bundle
from lads.evaluation import extended_accuracy, nn_scores
from lads.experiment import ExperimentConfig, run_experiment
from lads.probe import ProbeConfig
from lads.synthworld import WorldConfig, generate_world

SEEDS = [0, 1, 2, 3, 4]


def criterion(n, ok, detail):
    print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {n} failed: {detail}"


# ---------------------------------------------------------------------------
# shared world + pipeline runs for criteria 3 and 4
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def world_paths(tmp_path_factory):
    td = tmp_path_factory.mktemp("acceptance_world")
    world = generate_world(WorldConfig())  # D=64, C=10, K=2, offset 1.0, sigma 0.1, 100/cell
    bundle_path = str(td / "bundle.embndl")
    bank_path = str(td / "bank.prmbnk")
    save_bundle(world.bundle, bundle_path)
    save_bank(world.bank, bank_path)
    return td, bundle_path, bank_path


def pipeline_config(bundle_path, bank_path, out_dir, alpha, baselines):
    """The frozen acceptance configuration (calibrated by an oracle run)."""
    return ExperimentConfig(
        bundle_path=bundle_path,
        bank_path=bank_path,
        out_dir=out_dir,
        unseen_domains=["domain_1"],
        baselines=baselines,
        seeds=SEEDS,
        nn_sample_size=1000,
        aug=AugTrainConfig(alpha=alpha, lr=0.005, weight_decay=0.05, epochs=600,
                           batch_size=128, temperature=10.0),
        probe=ProbeConfig(lr=0.001, weight_decay=0.05, epochs=400, batch_size=512),
    )


@pytest.fixture(scope="session")
def pipeline_runs(world_paths):
    td, bundle_path, bank_path = world_paths
    runs = {}
    timings = {}
    start = time.time()
    runs["lp"] = run_experiment(
        pipeline_config(bundle_path, bank_path, str(td / "run_lp"), 0.5, ["lp"])
    )
    timings["lp"] = time.time() - start
    for alpha in (0.0, 0.5, 1.0):
        start = time.time()
        runs[alpha] = run_experiment(
            pipeline_config(bundle_path, bank_path, str(td / f"run_a{alpha}"),
                            alpha, ["lads"])
        )
        timings[alpha] = time.time() - start
    return td, runs, timings


# ---------------------------------------------------------------------------
# criterion 1: gradient correctness
# ---------------------------------------------------------------------------


def _random_bank(rng, n_domains=2, n_classes=5, dim=16):
    dc = normalize_rows(rng.standard_normal((n_domains * n_classes, dim)))
    ct = normalize_rows(rng.standard_normal((n_classes, dim)))
    return PromptBank(
        dim=dim,
        domain_class_text=dc.reshape(n_domains, n_classes, dim),
        class_text=ct,
        domain_names=[f"d{i}" for i in range(n_domains)],
        class_names=[f"c{i}" for i in range(n_classes)],
    )


def test_criterion_1_gradient_correctness():
    n_instances = 102
    h = 1e-5
    rtol, zero_atol = 1e-4, 1e-8
    dim, hidden, batch = 16, 8, 4
    start = time.time()
    worst = 0.0
    for i in range(n_instances):
        # redraw until no pre-activation sits within reach of the ReLU kink,
        # where the loss is non-differentiable and central differences lie
        for attempt in range(100):
            rng = np.random.default_rng(10_000 + 1_000_000 * attempt + i)
            bank = _random_bank(rng, dim=dim)
            params = init_params(dim, hidden, rng)
            params.b1 = 0.1 * rng.standard_normal(hidden)
            params.b2 = 0.1 * rng.standard_normal(dim)
            X = normalize_rows(rng.standard_normal((batch, dim)))
            y = rng.integers(0, 5, batch)
            Z = X @ params.W1.T + params.b1
            if np.min(np.abs(Z)) > 1e-3:
                break
        cfg = AugTrainConfig(alpha=(0.0, 0.5, 1.0)[i % 3], normalize_output=bool(i % 2))

        grads = lads_grad(params, X, y, bank, cfg, 0, 1)
        analytic = np.concatenate([g.ravel() for g in grads.as_list()])

        theta = np.concatenate([p.ravel() for p in params.as_list()])
        numeric = np.zeros_like(theta)
        shapes = [p.shape for p in params.as_list()]
        sizes = [p.size for p in params.as_list()]

        def rebuild(vec):
            from lads.augnet import AugNetParams

            parts, off = [], 0
            for shape, size in zip(shapes, sizes):
                parts.append(vec[off : off + size].reshape(shape))
                off += size
            return AugNetParams(*parts)

        for k in range(theta.size):
            plus, minus = theta.copy(), theta.copy()
            plus[k] += h
            minus[k] -= h
            numeric[k] = (
                lads_loss(rebuild(plus), X, y, bank, cfg, 0, 1)
                - lads_loss(rebuild(minus), X, y, bank, cfg, 0, 1)
            ) / (2 * h)

        denom = np.maximum(np.abs(analytic), np.abs(numeric))
        err = np.abs(analytic - numeric)
        ok = (err <= rtol * denom) | (err <= zero_atol)
        assert np.all(ok), f"instance {i}: worst error {err.max():.2e}"
        # worst relative error among coordinates large enough to measure one
        measured = err > zero_atol
        if np.any(measured):
            worst = max(worst, float((err[measured] / denom[measured]).max()))
    elapsed = time.time() - start
    criterion(
        1,
        elapsed < 60.0,
        f"{n_instances} instances, worst relative error {worst:.2e} < 1e-4, "
        f"{elapsed:.1f}s < 60s",
    )


# ---------------------------------------------------------------------------
# criterion 2: extended-accuracy arithmetic on reported table rows
# ---------------------------------------------------------------------------


def test_criterion_2_extended_accuracy_reproduces_reported_rows():
    rows = [
        (86.14, 66.18, 76.16),
        (95.33, 95.21, 95.27),
        (98.09, 71.80, 84.95),
    ]
    worst = 0.0
    for id_pct, ood_pct, ext_pct in rows:
        ext = extended_accuracy(id_pct / 100.0, ood_pct / 100.0, 0.5) * 100.0
        worst = max(worst, abs(ext - ext_pct))
        assert abs(ext - ext_pct) <= 0.01 + 1e-9, (id_pct, ood_pct, ext_pct)
    criterion(2, True, f"3 reported rows recomputed, worst gap {worst:.3f}pp <= 0.01pp")


# ---------------------------------------------------------------------------
# criterion 3: synthetic domain extension, pipeline beats the plain probe
# ---------------------------------------------------------------------------


def test_criterion_3_synthetic_domain_extension(pipeline_runs):
    td, runs, timings = pipeline_runs
    lads = runs[0.5]["lads"]
    lp = runs["lp"]["lp"]
    ood_gap = lads["ood_acc_mean"] - lp["ood_acc_mean"]
    ext_gap = lads["extended_acc_mean"] - lp["extended_acc_mean"]
    per_seed_time = timings[0.5] / len(SEEDS)
    ok = ood_gap >= 0.20 and ext_gap > 0.0 and per_seed_time < 120.0
    criterion(
        3,
        ok,
        f"OOD gap {ood_gap:+.3f} >= 0.20 "
        f"(lads {lads['ood_acc_mean']:.3f} vs lp {lp['ood_acc_mean']:.3f}), "
        f"extended gap {ext_gap:+.3f} > 0, {per_seed_time:.1f}s/seed < 120s",
    )


# ---------------------------------------------------------------------------
# criterion 4: loss-ablation trend over alpha
# ---------------------------------------------------------------------------


def test_criterion_4_loss_ablation_trend(pipeline_runs):
    td, runs, _ = pipeline_runs

    def per_seed(alpha):
        out = []
        for seed in SEEDS:
            path = os.path.join(str(td), f"run_a{alpha}", f"seed_{seed}", "lads.json")
            with open(path) as fh:
                data = json.load(fh)
            out.append(data["report"])
        return out

    a0, a5, a1 = per_seed(0.0), per_seed(0.5), per_seed(1.0)
    n = len(SEEDS)
    majority = n // 2 + 1
    checks = {
        "da(alpha=1) > da(alpha=0)": sum(
            a1[s]["da_score"] > a0[s]["da_score"] for s in range(n)
        ),
        "cc(alpha=0) >= cc(alpha=1)": sum(
            a0[s]["cc_score"] >= a1[s]["cc_score"] for s in range(n)
        ),
        "ext(alpha=0.5) >= ext(alpha=1)": sum(
            a5[s]["extended_acc"] >= a1[s]["extended_acc"] for s in range(n)
        ),
        "ext(alpha=0.5) >= ext(alpha=0)": sum(
            a5[s]["extended_acc"] >= a0[s]["extended_acc"] for s in range(n)
        ),
    }
    ok = all(count >= majority for count in checks.values())
    detail = ", ".join(f"{name}: {count}/{n}" for name, count in checks.items())
    criterion(4, ok, detail + f" (majority = {majority})")


# ---------------------------------------------------------------------------
# criterion 5: determinism of CLI runs
# ---------------------------------------------------------------------------


def test_criterion_5_cli_determinism(tmp_path):
    world_dir = tmp_path / "world"
    rc = cli_main([
        "synth-gen", "--out-dir", str(world_dir), "--dim", "32", "--classes", "4",
        "--n-per-class", "20", "--seed", "5",
    ])
    assert rc == 0
    out = tmp_path / "run"
    config = {
        "bundle_path": str(world_dir / "bundle.embndl"),
        "bank_path": str(world_dir / "bank.prmbnk"),
        "out_dir": str(out),
        "unseen_domains": ["domain_1"],
        "baselines": ["lp", "lads"],
        "seeds": [0, 1],
        "nn_sample_size": 50,
        "aug": {"epochs": 50, "lr": 0.005, "batch_size": 32, "temperature": 10.0},
        "probe": {"epochs": 60, "batch_size": 64},
    }
    cfg_path = tmp_path / "exp.json"
    cfg_path.write_text(json.dumps(config))

    def snapshot():
        files = {}
        for root, _, names in os.walk(out):
            for name in names:
                p = os.path.join(root, name)
                with open(p, "rb") as fh:
                    files[os.path.relpath(p, out)] = fh.read()
        return files

    assert cli_main(["run", "--config", str(cfg_path)]) == 0
    first = snapshot()
    assert cli_main(["run", "--config", str(cfg_path)]) == 0
    second = snapshot()
    identical = first.keys() == second.keys() and all(
        first[k] == second[k] for k in first
    )
    n_params = sum(k.endswith((".augnet", ".linprb")) for k in first)
    criterion(
        5,
        identical,
        f"{len(first)} files ({n_params} parameter files) byte-identical across reruns",
    )


# ---------------------------------------------------------------------------
# criterion 6: nearest-neighbor score oracle equivalence
# ---------------------------------------------------------------------------


def test_criterion_6_nn_score_oracle_equivalence():
    mismatches = 0
    for trial in range(20):
        rng = np.random.default_rng(7_000 + trial)
        n_test = int(rng.integers(3, 51))
        n_aug = int(rng.integers(2, 51))
        dim = int(rng.integers(3, 12))
        test_rows = normalize_rows(rng.standard_normal((n_test, dim)))
        aug_rows = normalize_rows(rng.standard_normal((n_aug, dim)))
        test_domains = rng.integers(0, 3, n_test)
        test_classes = rng.integers(0, 4, n_test)
        targets = rng.integers(0, 3, n_aug)
        classes = rng.integers(0, 4, n_aug)
        k = int(rng.integers(1, n_aug + 1))

        da, cc = nn_scores(aug_rows, targets, classes, test_rows, test_domains,
                           test_classes, sample_size=k, seed=trial)

        # independent exhaustive recomputation, same sampling and tie rule
        sel = np.sort(np.random.default_rng(trial).choice(n_aug, size=k, replace=False))
        da_hits = cc_hits = 0
        for qi in sel:
            q = aug_rows[qi] / np.linalg.norm(aug_rows[qi])
            best_sim, best_j = -np.inf, -1
            for j in range(n_test):
                t = test_rows[j] / np.linalg.norm(test_rows[j])
                sim = float(q @ t)
                if sim > best_sim:
                    best_sim, best_j = sim, j
            da_hits += int(test_domains[best_j] == targets[qi])
            cc_hits += int(test_classes[best_j] == classes[qi])
        if (da, cc) != (da_hits / k, cc_hits / k):
            mismatches += 1
    criterion(6, mismatches == 0, f"20 instances, {mismatches} mismatches vs exhaustive oracle")
