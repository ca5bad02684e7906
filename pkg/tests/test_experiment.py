import json
import os

import numpy as np
import pytest

from lads.augnet import AugTrainConfig
from lads.embedding_store import save_bank, save_bundle
from lads.errors import ConfigError
from lads.experiment import (
    ExperimentConfig,
    aggregate_runs,
    derive_seed,
    infer_train_domain,
    run_experiment,
    sweep,
)
from lads.probe import ProbeConfig
from lads.synthworld import WorldConfig, generate_world


@pytest.fixture(scope="module")
def small_world_paths(tmp_path_factory):
    td = tmp_path_factory.mktemp("world")
    world = generate_world(
        WorldConfig(dim=32, classes=4, domains=2, n_per_class_per_domain=25, seed=1)
    )
    bundle_path = str(td / "bundle.embndl")
    bank_path = str(td / "bank.prmbnk")
    save_bundle(world.bundle, bundle_path)
    save_bank(world.bank, bank_path)
    return world, bundle_path, bank_path


def fast_config(bundle_path, bank_path, out_dir, **overrides):
    base = dict(
        bundle_path=bundle_path,
        bank_path=bank_path,
        out_dir=out_dir,
        unseen_domains=["domain_1"],
        seeds=[0],
        nn_sample_size=50,
        aug=AugTrainConfig(epochs=40, lr=0.005, batch_size=32, temperature=10.0),
        probe=ProbeConfig(epochs=60, batch_size=64),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestConfigParsing:
    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(ConfigError, match="not_a_key"):
            ExperimentConfig.from_dict(
                {"bundle_path": "b", "bank_path": "k", "out_dir": "o", "not_a_key": 1}
            )

    def test_unknown_nested_key_rejected(self):
        with pytest.raises(ConfigError, match="learning_rate"):
            ExperimentConfig.from_dict(
                {
                    "bundle_path": "b",
                    "bank_path": "k",
                    "out_dir": "o",
                    "aug": {"learning_rate": 0.1},
                }
            )

    def test_unknown_baseline_rejected(self):
        cfg = ExperimentConfig(bundle_path="b", bank_path="k", out_dir="o",
                               baselines=["lp", "mystery"], unseen_domains=["d"])
        with pytest.raises(ConfigError, match="mystery"):
            cfg.validate()

    def test_empty_seeds_rejected(self):
        cfg = ExperimentConfig(bundle_path="b", bank_path="k", out_dir="o", seeds=[])
        with pytest.raises(ConfigError, match="seeds"):
            cfg.validate()

    def test_round_trip_through_json(self, tmp_path):
        cfg = ExperimentConfig(
            bundle_path="b", bank_path="k", out_dir="o",
            aug=AugTrainConfig(alpha=0.25), probe=ProbeConfig(lr=0.01),
        )
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg.to_resolved_dict()))
        loaded = ExperimentConfig.from_json(str(path))
        assert loaded.aug.alpha == 0.25
        assert loaded.probe.lr == 0.01

    def test_derive_seed_stable(self):
        assert derive_seed(3, 1, 0) == derive_seed(3, 1, 0)
        assert derive_seed(3, 1, 0) != derive_seed(3, 1, 1)
        assert derive_seed(3, 1, 0) != derive_seed(4, 1, 0)


class TestInferTrainDomain:
    def test_inferred_from_train_split(self, small_world_paths):
        world, bundle_path, bank_path = small_world_paths
        cfg = fast_config(bundle_path, bank_path, "unused")
        assert infer_train_domain(world.bundle, cfg) == 0

    def test_explicit_name_wins(self, small_world_paths):
        world, bundle_path, bank_path = small_world_paths
        cfg = fast_config(bundle_path, bank_path, "unused", train_domain="domain_1")
        assert infer_train_domain(world.bundle, cfg) == 1

    def test_unknown_name_rejected(self, small_world_paths):
        world, bundle_path, bank_path = small_world_paths
        cfg = fast_config(bundle_path, bank_path, "unused", train_domain="nowhere")
        with pytest.raises(ConfigError):
            infer_train_domain(world.bundle, cfg)


class TestRunExperiment:
    def test_zero_shot_only_single_seed_has_zero_std(self, small_world_paths, tmp_path):
        _, bundle_path, bank_path = small_world_paths
        cfg = fast_config(bundle_path, bank_path, str(tmp_path / "run"),
                          baselines=["zs_generic"], seeds=[0])
        agg = run_experiment(cfg)
        assert set(agg) == {"zs_generic"}
        assert agg["zs_generic"]["id_acc_std"] == 0.0
        assert agg["zs_generic"]["n_seeds"] == 1
        report = json.loads(
            (tmp_path / "run" / "seed_0" / "zs_generic.json").read_text()
        )
        assert report["report"]["id_acc"] == agg["zs_generic"]["id_acc_mean"]

    def test_full_pipeline_improves_over_plain_probe(self, small_world_paths, tmp_path):
        _, bundle_path, bank_path = small_world_paths
        cfg = fast_config(bundle_path, bank_path, str(tmp_path / "run"),
                          baselines=["lp", "lads"],
                          aug=AugTrainConfig(epochs=80, lr=0.005, batch_size=32,
                                             temperature=10.0))
        agg = run_experiment(cfg)
        assert agg["lads"]["ood_acc_mean"] > agg["lp"]["ood_acc_mean"]
        assert agg["lads"]["da_score_mean"] is not None
        assert "cc_score_mean" in agg["lads"]

    def test_rerun_is_byte_identical(self, small_world_paths, tmp_path):
        _, bundle_path, bank_path = small_world_paths
        out = tmp_path / "det"
        cfg = fast_config(bundle_path, bank_path, str(out),
                          baselines=["lp", "lads"], seeds=[0, 1])
        run_experiment(cfg)

        def snapshot():
            files = {}
            for root, _, names in os.walk(out):
                for name in names:
                    p = os.path.join(root, name)
                    files[os.path.relpath(p, out)] = open(p, "rb").read()
            return files

        first = snapshot()
        run_experiment(fast_config(bundle_path, bank_path, str(out),
                                   baselines=["lp", "lads"], seeds=[0, 1]))
        second = snapshot()
        assert first.keys() == second.keys()
        for name in first:
            assert first[name] == second[name], f"{name} differs between reruns"

    def test_aggregate_recomputable_from_per_seed_files(self, small_world_paths, tmp_path):
        _, bundle_path, bank_path = small_world_paths
        out = tmp_path / "agg"
        cfg = fast_config(bundle_path, bank_path, str(out),
                          baselines=["lp"], seeds=[0, 1, 2])
        agg = run_experiment(cfg)
        per_seed = {}
        for seed in (0, 1, 2):
            data = json.loads((out / f"seed_{seed}" / "lp.json").read_text())
            per_seed[seed] = {"lp": data}
        recomputed = aggregate_runs(per_seed)
        assert recomputed == agg

    def test_bias_mode_routes_per_row_assignments(self, small_world_paths, tmp_path):
        _, bundle_path, bank_path = small_world_paths
        cfg = fast_config(
            bundle_path, bank_path, str(tmp_path / "bias"),
            mode="bias",
            unseen_domains=[],
            bias_candidates=["domain_0", "domain_1"],
            baselines=["lads"],
            aug=AugTrainConfig(epochs=80, lr=0.005, batch_size=32, temperature=10.0),
        )
        agg = run_experiment(cfg)
        # train rows all live in domain 0, so the bias net behaves like the
        # standard single-target run and must still fix the unseen domain
        assert agg["lads"]["ood_acc_mean"] > 0.5

    def test_bias_mode_needs_two_candidates(self, small_world_paths, tmp_path):
        _, bundle_path, bank_path = small_world_paths
        cfg = fast_config(bundle_path, bank_path, str(tmp_path / "bad"),
                          mode="bias", bias_candidates=["domain_0"],
                          baselines=["lads"], unseen_domains=[])
        with pytest.raises(ConfigError):
            run_experiment(cfg)


class TestBiasAssignments:
    def test_mixed_domain_train_rows_get_per_row_pairs(self):
        # noiseless world; forge a train split containing both domains so the
        # zero-shot assignment has real work to do
        world = generate_world(
            WorldConfig(dim=32, classes=4, domains=2, noise_sigma=0.0,
                        n_per_class_per_domain=4, seed=3)
        )
        bundle = world.bundle
        test_idx = bundle.split_indices("test")
        bundle.split_tags[:] = 2
        bundle.split_tags[test_idx] = 0  # all test rows become the train split
        from lads.experiment import _train_lads_nets

        cfg = ExperimentConfig(
            bundle_path="", bank_path="", out_dir="", mode="bias",
            bias_candidates=["domain_0", "domain_1"], baselines=["lads"],
            aug=AugTrainConfig(epochs=0),
        )
        nets, targets = _train_lads_nets(bundle, world.bank, cfg, 0, seed=0)
        assert len(nets) == 1
        train_idx = bundle.split_indices("train")
        true_domains = bundle.domain_labels[train_idx]
        # target of every row is the *other* domain
        np.testing.assert_array_equal(targets[0], 1 - true_domains)


class TestSweep:
    def test_alpha_grid_and_best_selection(self, small_world_paths, tmp_path):
        _, bundle_path, bank_path = small_world_paths
        out = tmp_path / "sweep"
        cfg = fast_config(bundle_path, bank_path, str(out), baselines=["lads"],
                          aug=AugTrainConfig(epochs=40, lr=0.005, batch_size=32,
                                             temperature=10.0))
        result = sweep(cfg, {"alpha": [0.0, 0.5]})
        assert len(result["table"]) == 2
        assert result["grid_fields"] == ["alpha"]
        assert (out / "sweep.json").exists() and (out / "sweep.csv").exists()
        # best index equals a manual argmax over the emitted table
        vals = [entry.get("val_balanced_acc_mean", -np.inf) for entry in result["table"]]
        assert result["best_index"] == int(np.argmax(vals))
        # each grid point ran a full experiment in its own directory
        assert (out / "point_0" / "aggregate.json").exists()
        assert json.loads((out / "point_0" / "resolved_config.json").read_text())[
            "aug"]["alpha"] == 0.0

    def test_single_point_matches_run_experiment(self, small_world_paths, tmp_path):
        _, bundle_path, bank_path = small_world_paths
        cfg = fast_config(bundle_path, bank_path, str(tmp_path / "s1"),
                          baselines=["lads"])
        result = sweep(cfg, {"alpha": [0.5]})
        direct_cfg = fast_config(bundle_path, bank_path, str(tmp_path / "s2"),
                                 baselines=["lads"],
                                 aug=AugTrainConfig(alpha=0.5, epochs=40, lr=0.005,
                                                    batch_size=32, temperature=10.0))
        direct = run_experiment(direct_cfg)
        entry = result["table"][0]
        assert entry["extended_acc_mean"] == direct["lads"]["extended_acc_mean"]

    def test_empty_grid_rejected(self, small_world_paths, tmp_path):
        _, bundle_path, bank_path = small_world_paths
        cfg = fast_config(bundle_path, bank_path, str(tmp_path / "x"))
        with pytest.raises(ConfigError):
            sweep(cfg, {})
        with pytest.raises(ConfigError):
            sweep(cfg, {"alpha": []})
        with pytest.raises(ConfigError):
            sweep(cfg, {"bogus": [1]})
