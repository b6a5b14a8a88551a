"""Reference multimodal backbone and the baseline classification head.

Claims checked here:
- encoding is pure, deterministic, and batch-order equivariant;
- the forward computation matches an independent hand evaluation of
  mean-pool, affine, GeLU, concatenate, affine, GeLU on a tiny instance;
- shape violations fail with errors naming the modality and axis;
- analytic gradients of the encoder and the baseline head match central
  finite differences at double precision.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from deconf.backbone import (
    BackboneParams,
    VanillaHeadParams,
    encode,
    encode_backward,
    encode_with_cache,
    init_backbone,
    init_vanilla_head,
    stack_batch,
    vanilla_logits,
    vanilla_logits_backward,
)
from deconf.errors import ValidationError
from deconf.nn import cross_entropy, rng_stream
from tests.conftest import max_relative_grad_error


def hand_gelu(x: float) -> float:
    """Gaussian error linear unit evaluated independently via math.erf."""
    return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))


def small_inputs(batch=4, dims=(4, 3, 3), seq=(3, 2, 2), seed=0, dtype=np.float64):
    rng = np.random.default_rng(seed)
    return tuple(rng.normal(size=(batch, t, d)).astype(dtype) for t, d in zip(seq, dims))


class TestEncode:
    def test_zero_parameters_give_zero_output(self):
        params = init_backbone(rng_stream(0, 0), (4, 3, 3), d_enc=4, d_fused=6)
        for name, arr in params.flat().items():
            arr[...] = 0.0
        xs = small_inputs(dtype=np.float32)
        assert np.array_equal(encode(xs, params), np.zeros((4, 6), dtype=np.float32))

    def test_identical_samples_encode_identically(self):
        params = init_backbone(rng_stream(1, 0), (4, 3, 3), d_enc=4, d_fused=6)
        xs = small_inputs()
        dup = tuple(np.concatenate([x[:1], x[:1]]) for x in xs)
        out = encode(dup, params)
        assert np.array_equal(out[0], out[1])

    def test_batch_permutation_equivariance(self):
        params = init_backbone(rng_stream(2, 0), (4, 3, 3), d_enc=4, d_fused=6)
        xs = small_inputs(batch=5)
        perm = np.array([3, 0, 4, 1, 2])
        direct = encode(tuple(x[perm] for x in xs), params)
        permuted = encode(xs, params)[perm]
        assert np.array_equal(direct, permuted)

    def test_matches_hand_evaluation_on_a_tiny_instance(self):
        dims, seq = (2, 2, 2), (2, 1, 1)
        params = init_backbone(rng_stream(3, 0), dims, d_enc=2, d_fused=2, dtype=np.float64)
        xs = small_inputs(batch=1, dims=dims, seq=seq, seed=9)
        got = encode(xs, params)[0]

        encodings = []
        for mi in range(3):
            pooled = xs[mi][0].mean(axis=0)
            pre = params.enc_W[mi] @ pooled + params.enc_b[mi]
            encodings.extend(hand_gelu(v) for v in pre)
        fused_pre = params.fuse_W @ np.array(encodings) + params.fuse_b
        expected = np.array([hand_gelu(v) for v in fused_pre])
        assert np.allclose(got, expected, atol=1e-12)

    def test_frame_count_is_free_because_pooling_averages_over_it(self):
        params = init_backbone(rng_stream(4, 0), (4, 3, 3), d_enc=4, d_fused=6)
        xs = list(small_inputs())
        # Repeating every frame leaves the mean, and hence the encoding, unchanged.
        doubled = [np.concatenate([x, x], axis=1) for x in xs]
        assert np.allclose(encode(tuple(doubled), params), encode(tuple(xs), params), atol=1e-6)

    def test_missing_frame_axis_rejected(self):
        params = init_backbone(rng_stream(4, 0), (4, 3, 3), d_enc=4, d_fused=6)
        xs = list(small_inputs())
        xs[1] = xs[1][:, 0, :]
        with pytest.raises(ValidationError, match="v"):
            encode(tuple(xs), params)

    def test_wrong_feature_width_names_modality(self):
        params = init_backbone(rng_stream(5, 0), (4, 3, 3), d_enc=4, d_fused=6)
        xs = list(small_inputs())
        xs[2] = xs[2][:, :, :2]
        with pytest.raises(ValidationError, match="a"):
            encode(tuple(xs), params)


class TestVanillaHead:
    def test_identity_head_returns_the_representation(self):
        head = VanillaHeadParams(W=np.eye(3, dtype=np.float32), b=np.zeros(3, dtype=np.float32))
        m = np.arange(6, dtype=np.float32).reshape(2, 3)
        assert np.array_equal(vanilla_logits(m, head), m)

    def test_zero_head_gives_uniform_softmax(self):
        head = VanillaHeadParams(W=np.zeros((3, 4), dtype=np.float32), b=np.zeros(3, dtype=np.float32))
        logits = vanilla_logits(np.ones((2, 4), dtype=np.float32), head)
        assert np.array_equal(logits, np.zeros((2, 3), dtype=np.float32))

    def test_matches_direct_matrix_arithmetic(self):
        rng = np.random.default_rng(8)
        head = init_vanilla_head(rng_stream(6, 1), 5, 3, dtype=np.float64)
        m = rng.normal(size=(4, 5))
        assert np.allclose(vanilla_logits(m, head), m @ head.W.T + head.b, atol=1e-12)

    def test_width_mismatch_rejected(self):
        head = init_vanilla_head(rng_stream(7, 1), 5, 3)
        with pytest.raises(ValidationError):
            vanilla_logits(np.ones((2, 4), dtype=np.float32), head)


class TestGradients:
    def test_encoder_and_head_gradients_match_finite_differences(self):
        dims, seq = (3, 2, 2), (2, 2, 1)
        backbone = init_backbone(rng_stream(11, 0), dims, d_enc=3, d_fused=4, dtype=np.float64)
        head = init_vanilla_head(rng_stream(11, 1), 4, 3, dtype=np.float64)
        xs = small_inputs(batch=5, dims=dims, seq=seq, seed=21)
        labels = np.array([0, 1, 2, 1, 0])

        def loss():
            return cross_entropy(vanilla_logits(encode(xs, backbone), head), labels)[0]

        m, cache = encode_with_cache(xs, backbone)
        logits = vanilla_logits(m, head)
        _, dlogits = cross_entropy(logits, labels)
        grad_m, head_grads = vanilla_logits_backward(dlogits, m, head)
        bb_grads = encode_backward(grad_m, cache, backbone)

        err = max_relative_grad_error(loss, {**backbone.flat(), **head.flat()}, {**bb_grads, **head_grads})
        assert err <= 1e-4


class TestStackBatch:
    def test_stacks_in_sample_order(self, tiny_bundle):
        samples = tiny_bundle.split("train")[:6]
        x_t, x_v, x_a, y_t, y_s = stack_batch(samples)
        assert x_t.shape[0] == x_v.shape[0] == x_a.shape[0] == 6
        for i, s in enumerate(samples):
            assert np.array_equal(x_t[i], s.x_t)
            assert y_t[i] == s.y_t
            assert y_s[i] == s.y_s

    def test_empty_batch_rejected(self):
        with pytest.raises(ValidationError):
            stack_batch([])
