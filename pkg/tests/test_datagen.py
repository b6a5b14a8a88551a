"""Synthetic multimodal benchmark generator.

Claims checked here:
- configuration invariants are enforced with errors naming the offending field;
- generation is bit-deterministic per seed and honors the documented split
  arithmetic (per-subject train share, held-out subjects only in the
  out-of-distribution split);
- the construction realizes its statistical contract: unit-norm directions and
  styles, orthonormal class directions, skewed per-subject label priors for
  training subjects, uniform label priors for held-out subjects, and subject
  styles recoverable from per-subject mean features when styles dominate noise;
- on-disk bundles round-trip bit-exactly and corrupted artifacts fail with the
  distinct semantic error types.
"""

from __future__ import annotations

import json

import numpy as np
import pytest

from deconf.datagen import (
    GenConfig,
    MODALITIES,
    bundles_equal,
    default_bundle,
    generate,
    load_bundle,
    save_bundle,
)
from deconf.errors import (
    FormatVersionError,
    ShapeMismatchError,
    TruncatedPayloadError,
    ValidationError,
)
from tests.conftest import TINY_GEN


class TestConfigValidation:
    def test_defaults_are_the_documented_benchmark(self):
        cfg = GenConfig()
        assert cfg.n_train_subjects == 24
        assert cfg.n_ood_subjects == 8
        assert cfg.samples_per_subject == 200
        assert cfg.seq_lens == (12, 10, 10)
        assert cfg.dims == (16, 8, 8)
        assert cfg.n_classes == 3
        assert cfg.rho == 0.8
        assert cfg.alpha_signal == 1.0
        assert cfg.beta_style == 1.5
        assert cfg.sigma_noise == 0.7
        assert cfg.iid_holdout_frac == 0.2

    @pytest.mark.parametrize(
        "field,value",
        [
            ("rho", 0.2),          # below 1/n_classes for 3 classes
            ("rho", 1.2),
            ("n_train_subjects", 0),
            ("n_train_subjects", 2),  # fewer subjects than classes
            ("samples_per_subject", 0),
            ("alpha_signal", -1.0),
            ("beta_style", -0.5),
            ("sigma_noise", -0.1),
            ("iid_holdout_frac", 0.0),
            ("iid_holdout_frac", 1.0),
            ("n_classes", 1),
        ],
    )
    def test_invalid_field_is_named_in_the_error(self, field, value):
        with pytest.raises(ValidationError, match=field):
            GenConfig(**{field: value}).validate()

    def test_dims_must_fit_the_class_count(self):
        with pytest.raises(ValidationError, match="dims"):
            GenConfig(dims=(2, 8, 8), n_classes=3).validate()

    def test_unknown_config_key_rejected(self):
        doc = GenConfig().to_dict()
        doc["extra_knob"] = 1
        with pytest.raises(ValidationError, match="extra_knob"):
            GenConfig.from_dict(doc)

    def test_dict_round_trip(self):
        cfg = GenConfig(rho=0.9, seed=11, beta_style_per_modality=(1.0, 2.0, 3.0))
        assert GenConfig.from_dict(cfg.to_dict()) == cfg


class TestGeneration:
    def test_determinism_is_bitwise(self):
        a = generate(TINY_GEN)
        b = generate(TINY_GEN)
        assert bundles_equal(a, b)

    def test_seed_changes_the_data(self):
        a = generate(TINY_GEN)
        b = generate(GenConfig(**{**TINY_GEN.to_dict(), "seed": TINY_GEN.seed + 1}))
        assert not bundles_equal(a, b)

    def test_split_sizes_follow_the_holdout_arithmetic(self, tiny_bundle):
        cfg = tiny_bundle.config
        per_subject_train = int(np.ceil((1.0 - cfg.iid_holdout_frac) * cfg.samples_per_subject))
        train = tiny_bundle.split("train")
        iid = tiny_bundle.split("iid_test")
        ood = tiny_bundle.split("ood_test")
        assert len(train) == per_subject_train * cfg.n_train_subjects
        assert len(iid) == (cfg.samples_per_subject - per_subject_train) * cfg.n_train_subjects
        assert len(ood) == cfg.samples_per_subject * cfg.n_ood_subjects

    def test_held_out_subjects_never_leak_into_training_splits(self, tiny_bundle):
        cfg = tiny_bundle.config
        train_ids = {s.y_s for s in tiny_bundle.split("train")} | {
            s.y_s for s in tiny_bundle.split("iid_test")
        }
        ood_ids = {s.y_s for s in tiny_bundle.split("ood_test")}
        assert train_ids == set(range(cfg.n_train_subjects))
        assert ood_ids == set(range(cfg.n_train_subjects, cfg.n_train_subjects + cfg.n_ood_subjects))

    def test_noiseless_styleless_frames_equal_the_class_direction(self):
        cfg = GenConfig(
            n_train_subjects=3,
            n_ood_subjects=1,
            samples_per_subject=5,
            seq_lens=(2, 2, 2),
            dims=(4, 3, 3),
            beta_style=0.0,
            sigma_noise=0.0,
            alpha_signal=2.0,
            seed=3,
        )
        bundle = generate(cfg)
        directions = bundle.class_directions
        for sample in bundle.split("train"):
            for mi, m in enumerate(MODALITIES):
                frames = sample.modality(m)
                expected = 2.0 * directions[mi][:, sample.y_t]
                assert np.allclose(frames, expected[None, :], atol=1e-6)

    def test_unit_norms_and_orthonormal_class_directions(self, tiny_bundle):
        for mats in tiny_bundle.class_directions:
            gram = mats.T @ mats
            assert np.allclose(gram, np.eye(mats.shape[1]), atol=1e-9)
        for subject in tiny_bundle.subjects:
            for vec in subject.style_vectors:
                assert abs(np.linalg.norm(vec) - 1.0) <= 1e-9

    def test_training_subject_labels_are_skewed_to_the_preferred_class(self):
        cfg = GenConfig(samples_per_subject=1000, seq_lens=(2, 2, 2), dims=(4, 3, 3), seed=13)
        bundle = generate(cfg)
        labels = {}
        for split in ("train", "iid_test"):
            for sample in bundle.split(split):
                labels.setdefault(sample.y_s, []).append(sample.y_t)
        # binomial bound: 1000 draws at rho=0.8 put the preferred count within
        # 800 +/- 3 * sqrt(1000 * 0.8 * 0.2) ~ 800 +/- 38 with probability ~99.7%
        within = 0
        for subject in bundle.subjects[: cfg.n_train_subjects]:
            counts = np.bincount(labels[subject.subject_id], minlength=cfg.n_classes)
            if abs(counts[subject.preferred_class] - 800) <= 38:
                within += 1
        assert within >= 23  # at least 23 of 24 subjects inside the 3-sigma band

    def test_held_out_subject_labels_are_uniform(self):
        cfg = GenConfig(
            n_train_subjects=3,
            n_ood_subjects=4,
            samples_per_subject=900,
            seq_lens=(2, 2, 2),
            dims=(4, 3, 3),
            seed=29,
        )
        bundle = generate(cfg)
        for subject in bundle.subjects[cfg.n_train_subjects :]:
            assert subject.preferred_class == -1
            ys = [s.y_t for s in bundle.split("ood_test") if s.y_s == subject.subject_id]
            freq = np.bincount(ys, minlength=3) / len(ys)
            # 900 uniform draws keep each class frequency within ~5 sigma of 1/3
            assert np.max(np.abs(freq - 1.0 / 3.0)) < 0.08

    def test_subject_mean_features_reveal_the_preferred_class_when_style_dominates(self):
        cfg = GenConfig(
            samples_per_subject=60,
            beta_style=2.0,
            sigma_noise=1.0,
            seed=17,
        )
        bundle = generate(cfg)
        per_subject = {}
        for sample in bundle.split("train"):
            pooled = np.concatenate([sample.modality(m).mean(axis=0) for m in MODALITIES])
            per_subject.setdefault(sample.y_s, []).append(pooled)
        ids = sorted(per_subject)
        feats = np.array([np.mean(per_subject[i], axis=0) for i in ids])
        prefs = np.array([bundle.subjects[i].preferred_class for i in ids])
        design = np.hstack([feats, np.ones((len(ids), 1))])
        onehot = np.eye(cfg.n_classes)[prefs]
        weights, *_ = np.linalg.lstsq(design, onehot, rcond=None)
        accuracy = float((np.argmax(design @ weights, axis=1) == prefs).mean())
        assert accuracy >= 0.9

    def test_default_bundle_matches_generate(self):
        a = default_bundle(seed=TINY_GEN.seed)
        b = generate(GenConfig(seed=TINY_GEN.seed))
        assert bundles_equal(a, b)


class TestPersistence:
    def test_round_trip_is_bit_exact(self, tiny_bundle, tmp_path):
        path = save_bundle(tiny_bundle, tmp_path / "bundle")
        back = load_bundle(path)
        assert bundles_equal(tiny_bundle, back)
        for split in ("train", "iid_test", "ood_test"):
            for a, b in zip(tiny_bundle.split(split), back.split(split)):
                for m in MODALITIES:
                    assert np.array_equal(a.modality(m), b.modality(m))

    def test_version_mismatch_is_a_distinct_error(self, tiny_bundle, tmp_path):
        path = save_bundle(tiny_bundle, tmp_path / "bundle")
        meta = json.loads((path / "meta.json").read_text())
        meta["format_version"] = 999
        (path / "meta.json").write_text(json.dumps(meta))
        with pytest.raises(FormatVersionError):
            load_bundle(path)

    def test_truncated_payload_is_a_distinct_error(self, tiny_bundle, tmp_path):
        path = save_bundle(tiny_bundle, tmp_path / "bundle")
        payload = (path / "train.bin").read_bytes()
        (path / "train.bin").write_bytes(payload[:-8])
        with pytest.raises(TruncatedPayloadError):
            load_bundle(path)

    def test_missing_payload_is_a_truncation_error(self, tiny_bundle, tmp_path):
        path = save_bundle(tiny_bundle, tmp_path / "bundle")
        (path / "ood_test.bin").unlink()
        with pytest.raises(TruncatedPayloadError):
            load_bundle(path)

    def test_oversized_payload_is_a_shape_error(self, tiny_bundle, tmp_path):
        path = save_bundle(tiny_bundle, tmp_path / "bundle")
        with (path / "train.bin").open("ab") as fh:
            fh.write(b"\x00" * 16)
        with pytest.raises(ShapeMismatchError):
            load_bundle(path)

    def test_manifest_payload_disagreement_is_a_shape_error(self, tiny_bundle, tmp_path):
        path = save_bundle(tiny_bundle, tmp_path / "bundle")
        meta = json.loads((path / "meta.json").read_text())
        meta["config"]["dims"] = [5, 3, 3]
        (path / "meta.json").write_text(json.dumps(meta))
        with pytest.raises(ShapeMismatchError):
            load_bundle(path)

    def test_two_saves_write_identical_bytes(self, tiny_bundle, tmp_path):
        p1 = save_bundle(tiny_bundle, tmp_path / "one")
        p2 = save_bundle(generate(TINY_GEN), tmp_path / "two")
        assert (p1 / "meta.json").read_bytes() == (p2 / "meta.json").read_bytes()
        for split in ("train", "iid_test", "ood_test"):
            assert (p1 / f"{split}.bin").read_bytes() == (p2 / f"{split}.bin").read_bytes()
