# Copyright 2026 The ContextCap Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import dataclasses

import numpy as np
import pytest

from contextcap.captioner import CaptionerModel
from contextcap.config import AblationFlags
from contextcap.exceptions import DimensionError
from contextcap.parameters import ParameterSet
from contextcap.tensor import Tensor, no_grad
from contextcap.verify import TINY_VOCAB, random_context, tiny_model, tiny_model_config
from contextcap.vocab import EOS, SOS


@pytest.fixture
def model_and_context():
    model, ctx, _ = tiny_model(0)
    return model, ctx


def built(name):
    model = CaptionerModel(ParameterSet(1), TINY_VOCAB, tiny_model_config(), AblationFlags.for_model(name))
    model.build()
    return model


class TestForward:
    def test_logit_shape(self, model_and_context):
        model, ctx = model_and_context
        with no_grad():
            logits = model.forward_teacher_forced([SOS, 4, 5], ctx)
        assert logits.shape == (3, TINY_VOCAB)
        assert np.isfinite(logits.data).all()

    def test_sequence_length_checked(self, model_and_context):
        model, ctx = model_and_context
        with pytest.raises(DimensionError, match="sequence length"):
            model.forward_teacher_forced([SOS] * (model.max_positions + 1), ctx)
        with pytest.raises(DimensionError):
            model.forward_teacher_forced([], ctx)

    def test_layer_index_checked(self, model_and_context):
        model, ctx = model_and_context
        h = Tensor(np.zeros((1, model.d_model)))
        with pytest.raises(DimensionError, match="layer2"):
            model.decoder_layer_forward(h, ctx, 2)

    def test_future_tokens_do_not_leak(self, model_and_context):
        model, ctx = model_and_context
        with no_grad():
            a = model.forward_teacher_forced([SOS, 4, 5, 6, 7], ctx).data
            b = model.forward_teacher_forced([SOS, 4, 5, 9, 3], ctx).data
        np.testing.assert_array_equal(a[:3], b[:3])
        assert not np.array_equal(a[3:], b[3:])

    def test_incremental_matches_teacher_forced(self, model_and_context):
        model, ctx = model_and_context
        tokens = [SOS, 4, 5, 6]
        with no_grad():
            full = model.forward_teacher_forced(tokens, ctx).data
            state = model.new_state()
            steps = [model.advance(state, t, ctx) for t in tokens]
        np.testing.assert_allclose(np.stack(steps), full, atol=1e-8)


class TestDecoding:
    def test_greedy_is_deterministic_and_bounded(self, model_and_context):
        model, ctx = model_and_context
        first = model.greedy_decode(ctx)
        assert first == model.greedy_decode(ctx)
        assert len(first) <= model.config.max_caption_len
        assert EOS not in first
        assert len(model.greedy_decode(ctx, max_len=2)) <= 2

    def test_zero_temperature_sampling_is_greedy(self, model_and_context):
        model, ctx = model_and_context
        words, log_probs = model.sample_decode(ctx, 0.0, np.random.default_rng(3))
        assert words == model.greedy_decode(ctx)
        assert log_probs.shape[0] in (len(words), len(words) + 1)
        assert np.all(log_probs.data <= 0.0)

    def test_sampling_is_seeded(self, model_and_context):
        model, ctx = model_and_context
        a, _ = model.sample_decode(ctx, 1.0, np.random.default_rng(11))
        b, _ = model.sample_decode(ctx, 1.0, np.random.default_rng(11))
        assert a == b


class TestAblations:
    def test_model_a_has_no_superpoint_or_local_branch(self):
        names = built("A").params.names()
        assert not [n for n in names if n.startswith("layer0.lcm.") or n.startswith("layer1.lcm.")]
        assert not [n for n in names if ".gcm.sp_" in n]
        assert [n for n in names if n.startswith("layer0.gcm.obj_attn")]

    def test_model_b_adds_gcm_superpoints_only(self):
        names = built("B").params.names()
        assert [n for n in names if ".gcm.sp_attn" in n]
        assert not [n for n in names if ".lcm." in n]

    def test_model_c_has_local_branch_without_superpoints(self):
        names = built("C").params.names()
        assert [n for n in names if ".lcm.obj_attn" in n]
        assert not [n for n in names if ".lcm.sp_" in n]

    def test_model_d_is_complete(self):
        names = built("D").params.names()
        for block in ("gcm.sp_attn", "lcm.obj_attn", "lcm.sp_attn", "fuse.ffn"):
            assert [n for n in names if f"layer1.{block}" in n], block
        assert "head.out_proj.weight" in names

    def test_ablated_models_still_decode(self):
        rng = np.random.default_rng(0)
        ctx = random_context(rng, tiny_model_config().d_model)
        for name in AblationFlags.MODELS:
            words = built(name).greedy_decode(ctx)
            assert len(words) <= tiny_model_config().max_caption_len


def zeros_like(t):
    return Tensor(np.zeros_like(t.data))


def without_superpoints(ctx):
    return dataclasses.replace(
        ctx,
        superpoint_centers=zeros_like(ctx.superpoint_centers),
        superpoint_features=zeros_like(ctx.superpoint_features),
    )


def shuffled_local_context(ctx, rng):
    return dataclasses.replace(
        ctx,
        target_feature=Tensor(rng.normal(size=ctx.target_feature.shape)),
        neighbor_object_features=Tensor(rng.normal(size=ctx.neighbor_object_features.shape)),
        neighbor_superpoint_features=Tensor(rng.normal(size=ctx.neighbor_superpoint_features.shape)),
    )


class TestAblationInputs:
    TOKENS = [SOS, 4, 5, 6]

    @pytest.fixture
    def ctx(self):
        return random_context(np.random.default_rng(3), tiny_model_config().d_model)

    def logits(self, model, ctx):
        with no_grad():
            return model.forward_teacher_forced(self.TOKENS, ctx).data

    def test_model_a_ignores_superpoints(self, ctx):
        model = built("A")
        np.testing.assert_array_equal(self.logits(model, ctx), self.logits(model, without_superpoints(ctx)))
        permuted = dataclasses.replace(
            ctx, superpoint_features=Tensor(ctx.superpoint_features.data[::-1].copy())
        )
        np.testing.assert_array_equal(self.logits(model, ctx), self.logits(model, permuted))

    @pytest.mark.parametrize("name", ["A", "B"])
    def test_models_without_lcm_ignore_local_context(self, name, ctx):
        model = built(name)
        other = shuffled_local_context(ctx, np.random.default_rng(4))
        np.testing.assert_array_equal(self.logits(model, ctx), self.logits(model, other))

    def test_model_b_reads_superpoints(self, ctx):
        model = built("B")
        assert not np.allclose(self.logits(model, ctx), self.logits(model, without_superpoints(ctx)))

    def test_model_c_ignores_neighbor_superpoints(self, ctx):
        model = built("C")
        other = dataclasses.replace(ctx, neighbor_superpoint_features=zeros_like(ctx.neighbor_superpoint_features))
        np.testing.assert_array_equal(self.logits(model, ctx), self.logits(model, other))
        changed = dataclasses.replace(ctx, neighbor_object_features=zeros_like(ctx.neighbor_object_features))
        assert not np.allclose(self.logits(model, ctx), self.logits(model, changed))

    def test_model_d_reads_neighbor_superpoints(self, ctx):
        model = built("D")
        other = dataclasses.replace(ctx, neighbor_superpoint_features=zeros_like(ctx.neighbor_superpoint_features))
        assert not np.allclose(self.logits(model, ctx), self.logits(model, other))
