"""Training loops for both arms: optimization progress, loss bookkeeping,
dictionary life cycle, variant switches, evaluation purity, determinism, and
checkpoint persistence with its three failure classes.
"""

from __future__ import annotations

import copy
from dataclasses import replace

import numpy as np
import pytest

from deconf.datagen import GenConfig, generate
from deconf.errors import (
    FormatVersionError,
    NonFiniteLossError,
    ShapeMismatchError,
    TruncatedPayloadError,
    ValidationError,
)
from deconf.subject import generator_with_cache, fusion_with_cache
from deconf.training import (
    VARIANTS,
    TrainConfig,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train_suci,
    train_vanilla,
    variant_modes,
)
from tests.conftest import TINY_TRAIN


def params_equal(a: dict, b: dict) -> bool:
    return set(a) == set(b) and all(np.array_equal(a[k], b[k]) for k in a)


class TestConfig:
    def test_round_trip_and_unknown_key(self):
        cfg = replace(TINY_TRAIN, variant="no_psi", learning_rate=2e-3)
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ValidationError, match="momentum"):
            TrainConfig.from_dict({**cfg.to_dict(), "momentum": 0.9})

    @pytest.mark.parametrize(
        "field,value",
        [
            ("epochs", -1),
            ("batch_size", 0),
            ("learning_rate", 0.0),
            ("task_disc_mode", "gan"),
            ("variant", "bogus"),
            ("loss_weight_task", -0.1),
            ("d_enc", 0),
        ],
    )
    def test_invalid_fields_rejected(self, field, value):
        with pytest.raises(ValidationError, match=field):
            replace(TrainConfig(), **{field: value}).validate()

    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.epochs, cfg.batch_size, cfg.learning_rate) == (30, 64, 1e-3)
        assert cfg.task_disc_mode == "adversarial"
        assert (cfg.d_enc, cfg.d_fused, cfg.d_h, cfg.d_n) == (32, 64, 64, 128)


class TestVariantModes:
    def test_every_variant_has_well_formed_switches(self):
        for v in VARIANTS:
            modes = variant_modes(v)
            assert set(modes) == {"drop", "pool_mode", "psi_mode", "prior_mode", "term_weights"}

    def test_specific_switches(self):
        assert variant_modes("full") == {
            "drop": frozenset(),
            "pool_mode": "attention",
            "psi_mode": "attention",
            "prior_mode": "counts",
            "term_weights": (1.0, 1.0),
        }
        assert variant_modes("no_text")["drop"] == frozenset({"t"})
        assert variant_modes("no_visual")["drop"] == frozenset({"v"})
        assert variant_modes("no_audio")["drop"] == frozenset({"a"})
        assert variant_modes("avg_pool")["pool_mode"] == "mean"
        assert variant_modes("no_psi")["psi_mode"] == "uniform"
        assert variant_modes("no_prior")["prior_mode"] == "uniform"
        assert variant_modes("no_subject_disc")["term_weights"] == (0.0, 1.0)
        assert variant_modes("no_task_disc")["term_weights"] == (1.0, 0.0)

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValidationError, match="bogus"):
            variant_modes("bogus")


class TestTrainingProgress:
    def test_zero_epochs_returns_the_deterministic_init(self, tiny_bundle):
        cfg = replace(TINY_TRAIN, epochs=0)
        a = train_suci(tiny_bundle, cfg)
        b = train_suci(tiny_bundle, cfg)
        assert params_equal(a.params, b.params)
        assert a.epoch == 0 and a.epoch_losses == [] and a.batch_log == []
        assert a.dictionary.updates == 0
        trained = train_suci(tiny_bundle, replace(cfg, epochs=1))
        assert not params_equal(a.params, trained.params)

    def test_vanilla_task_loss_decreases_across_seeds(self, tiny_bundle):
        for seed in range(5):
            ck = train_vanilla(tiny_bundle, replace(TINY_TRAIN, epochs=8, seed=seed))
            assert ck.epoch_losses[-1]["task"] < ck.epoch_losses[0]["task"], f"seed {seed}"
            assert all(row["subject"] == 0.0 for row in ck.epoch_losses)

    def test_suci_task_and_subject_losses_decrease_for_most_seeds(self, tiny_bundle):
        task_wins = subject_wins = 0
        for seed in range(5):
            ck = train_suci(tiny_bundle, replace(TINY_TRAIN, epochs=8, seed=seed))
            task_wins += ck.epoch_losses[-1]["task"] < ck.epoch_losses[0]["task"]
            subject_wins += ck.epoch_losses[-1]["subject"] < ck.epoch_losses[0]["subject"]
        assert task_wins >= 4
        assert subject_wins >= 4

    def test_total_loss_is_the_unweighted_sum_every_batch(self, tiny_bundle):
        ck = train_suci(tiny_bundle, replace(TINY_TRAIN, epochs=3))
        assert len(ck.batch_log) > 0
        for row in ck.batch_log:
            assert abs(row["total"] - (row["task"] + row["subject"])) <= 1e-12

    def test_loss_weights_scale_the_total(self, tiny_bundle):
        cfg = replace(TINY_TRAIN, epochs=1, loss_weight_task=0.5, loss_weight_subject=2.0)
        ck = train_suci(tiny_bundle, cfg)
        row = ck.batch_log[0]
        assert abs(row["total"] - (0.5 * row["task"] + 2.0 * row["subject"])) <= 1e-12

    def test_non_finite_loss_raises_the_dedicated_error(self, tiny_bundle):
        cfg = replace(TINY_TRAIN, epochs=20, learning_rate=1e10)
        with np.errstate(all="ignore"):
            with pytest.raises(NonFiniteLossError, match="epoch"):
                train_suci(tiny_bundle, cfg)

    def test_suci_refuses_the_vanilla_variant(self, tiny_bundle):
        with pytest.raises(ValidationError, match="train_vanilla"):
            train_suci(tiny_bundle, replace(TINY_TRAIN, variant="vanilla"))

    def test_deterministic_per_seed(self, tiny_bundle):
        cfg = replace(TINY_TRAIN, epochs=3)
        a, b = train_suci(tiny_bundle, cfg), train_suci(tiny_bundle, cfg)
        assert params_equal(a.params, b.params)
        assert np.array_equal(a.dictionary.Z, b.dictionary.Z)
        assert a.epoch_losses == b.epoch_losses
        c = train_suci(tiny_bundle, replace(cfg, seed=cfg.seed + 1))
        assert not params_equal(a.params, c.params)
        va, vb = train_vanilla(tiny_bundle, cfg), train_vanilla(tiny_bundle, cfg)
        assert params_equal(va.params, vb.params)


class TestDictionaryLifecycle:
    def test_one_update_per_epoch(self, tiny_bundle):
        for epochs in (1, 3):
            ck = train_suci(tiny_bundle, replace(TINY_TRAIN, epochs=epochs))
            assert ck.dictionary.updates == epochs

    def test_first_epoch_prototypes_are_means_under_the_init_parameters(self, tiny_bundle):
        # One batch per epoch: features are produced by the init parameters
        # before any step, so the epoch-end means are exactly computable.
        n_train = len(tiny_bundle.split("train"))
        cfg = replace(TINY_TRAIN, epochs=1, batch_size=n_train)
        init = train_suci(tiny_bundle, replace(cfg, epochs=0))
        ck = train_suci(tiny_bundle, cfg)

        from deconf.backbone import stack_batch

        X_t, X_v, X_a, _, y_s = stack_batch(tiny_bundle.split("train"))
        cat, _ = fusion_with_cache((X_t, X_v, X_a), init.fusion_params())
        S, _ = generator_with_cache(cat, init.generator_params())
        for j in range(ck.dictionary.n_subjects):
            expected = S[y_s == j].astype(np.float64).mean(axis=0)
            assert np.allclose(ck.dictionary.Z[j], expected, atol=1e-6), f"subject {j}"

    def test_priors_are_training_split_shares(self, tiny_bundle):
        ck = train_suci(tiny_bundle, replace(TINY_TRAIN, epochs=1))
        y_s = np.array([s.y_s for s in tiny_bundle.split("train")])
        counts = np.bincount(y_s, minlength=ck.dictionary.n_subjects)
        assert np.array_equal(ck.dictionary.counts, counts)
        assert abs(ck.dictionary.priors.sum() - 1.0) <= 1e-12

    def test_random_prototypes_stay_frozen_but_count_epochs(self, tiny_bundle):
        cfg = replace(TINY_TRAIN, epochs=2, variant="random_Z")
        ck = train_suci(tiny_bundle, cfg)
        assert ck.dictionary.frozen
        assert ck.dictionary.updates == 2
        init = train_suci(tiny_bundle, replace(cfg, epochs=0))
        assert np.array_equal(ck.dictionary.Z, init.dictionary.Z)

    def test_clustered_prototypes_rebuilt_each_epoch(self, tiny_bundle):
        cfg = replace(TINY_TRAIN, epochs=2, variant="clustered_Z")
        ck = train_suci(tiny_bundle, cfg)
        assert ck.dictionary.frozen
        assert ck.dictionary.updates == 2
        assert ck.dictionary.n_subjects == tiny_bundle.config.n_train_subjects
        assert abs(ck.dictionary.priors.sum() - 1.0) <= 1e-12

    def test_every_nonbaseline_variant_trains_without_error(self, tiny_bundle):
        for v in VARIANTS:
            if v == "vanilla":
                continue
            ck = train_suci(tiny_bundle, replace(TINY_TRAIN, epochs=1, variant=v))
            assert ck.arm == "suci" and ck.epoch == 1, v


class TestEvaluate:
    def test_reports_are_deterministic_and_well_formed(self, tiny_bundle):
        ck = train_suci(tiny_bundle, replace(TINY_TRAIN, epochs=2))
        r1 = evaluate(ck, tiny_bundle, "iid_test")
        r2 = evaluate(ck, tiny_bundle, "iid_test")
        assert r1 == r2
        assert r1.split == "iid_test" and r1.variant == "full"
        assert r1.n_samples == len(tiny_bundle.split("iid_test"))

    def test_never_mutates_the_checkpoint(self, tiny_bundle):
        ck = train_suci(tiny_bundle, replace(TINY_TRAIN, epochs=1))
        before = copy.deepcopy(ck.params)
        z_before = ck.dictionary.Z.copy()
        evaluate(ck, tiny_bundle, "ood_test")
        assert params_equal(ck.params, before)
        assert np.array_equal(ck.dictionary.Z, z_before)

    def test_unknown_split_rejected(self, tiny_bundle):
        ck = train_vanilla(tiny_bundle, replace(TINY_TRAIN, epochs=1))
        with pytest.raises(ValidationError, match="nope"):
            evaluate(ck, tiny_bundle, "nope")

    def test_dimension_mismatch_names_the_offending_key(self, tiny_bundle):
        ck = train_vanilla(tiny_bundle, replace(TINY_TRAIN, epochs=1))
        other = generate(
            GenConfig(
                n_train_subjects=3,
                n_ood_subjects=2,
                samples_per_subject=12,
                seq_lens=(3, 2, 2),
                dims=(5, 3, 3),
                n_classes=3,
                seed=7,
            )
        )
        with pytest.raises(ValidationError, match="dims"):
            evaluate(ck, other, "iid_test")

    def test_vanilla_and_suci_use_their_own_heads(self, tiny_bundle):
        cfg = replace(TINY_TRAIN, epochs=1)
        van = train_vanilla(tiny_bundle, cfg)
        suci = train_suci(tiny_bundle, cfg)
        assert van.dictionary is None
        assert "vanilla_head.W" in van.params and "intervention.W_m" not in van.params
        assert "intervention.W_m" in suci.params and "vanilla_head.W" not in suci.params


class TestCheckpointPersistence:
    @pytest.fixture()
    def trained(self, tiny_bundle):
        return train_suci(tiny_bundle, replace(TINY_TRAIN, epochs=2))

    def test_round_trip_preserves_evaluation_exactly(self, trained, tiny_bundle, tmp_path):
        save_checkpoint(trained, tmp_path / "ck")
        loaded = load_checkpoint(tmp_path / "ck")
        assert params_equal(loaded.params, trained.params)
        assert np.array_equal(loaded.dictionary.Z, trained.dictionary.Z)
        assert np.array_equal(loaded.dictionary.counts, trained.dictionary.counts)
        assert loaded.dictionary.updates == trained.dictionary.updates
        assert loaded.config == trained.config
        assert loaded.epoch_losses == trained.epoch_losses
        for split in ("iid_test", "ood_test"):
            assert evaluate(loaded, tiny_bundle, split) == evaluate(trained, tiny_bundle, split)

    def test_vanilla_round_trip(self, tiny_bundle, tmp_path):
        ck = train_vanilla(tiny_bundle, replace(TINY_TRAIN, epochs=1))
        save_checkpoint(ck, tmp_path / "v")
        loaded = load_checkpoint(tmp_path / "v")
        assert loaded.dictionary is None
        assert evaluate(loaded, tiny_bundle, "iid_test") == evaluate(ck, tiny_bundle, "iid_test")

    def test_two_saves_are_byte_identical(self, trained, tmp_path):
        save_checkpoint(trained, tmp_path / "a")
        save_checkpoint(trained, tmp_path / "b")
        for name in ("manifest.json", "params.bin", "dictionary.bin"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_unsupported_format_version_rejected(self, trained, tmp_path):
        import json

        root = save_checkpoint(trained, tmp_path / "ck")
        manifest = json.loads((root / "manifest.json").read_text())
        manifest["format_version"] = 999
        (root / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(FormatVersionError, match="999"):
            load_checkpoint(root)

    def test_truncated_payload_rejected(self, trained, tmp_path):
        root = save_checkpoint(trained, tmp_path / "ck")
        raw = (root / "params.bin").read_bytes()
        (root / "params.bin").write_bytes(raw[:-8])
        with pytest.raises(TruncatedPayloadError, match="truncated"):
            load_checkpoint(root)

    def test_missing_payload_rejected(self, trained, tmp_path):
        root = save_checkpoint(trained, tmp_path / "ck")
        (root / "params.bin").unlink()
        with pytest.raises(TruncatedPayloadError, match="missing"):
            load_checkpoint(root)

    def test_extra_bytes_rejected_as_shape_mismatch(self, trained, tmp_path):
        root = save_checkpoint(trained, tmp_path / "ck")
        with open(root / "params.bin", "ab") as fh:
            fh.write(b"\x00" * 16)
        with pytest.raises(ShapeMismatchError, match="mismatch"):
            load_checkpoint(root)

    def test_tampered_shape_rejected(self, trained, tmp_path):
        import json

        root = save_checkpoint(trained, tmp_path / "ck")
        manifest = json.loads((root / "manifest.json").read_text())
        manifest["params"][0]["shape"][0] += 1
        (root / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(ShapeMismatchError):
            load_checkpoint(root)

    def test_missing_dictionary_payload_rejected(self, trained, tmp_path):
        root = save_checkpoint(trained, tmp_path / "ck")
        (root / "dictionary.bin").unlink()
        with pytest.raises(TruncatedPayloadError, match="dictionary"):
            load_checkpoint(root)

    def test_missing_manifest_rejected(self, tmp_path):
        with pytest.raises(ValidationError, match="manifest"):
            load_checkpoint(tmp_path / "empty")
