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
"""The caption decoder: stacked GCM / LCM layers over token states.

Parameter layout (layers are numbered from 0)::

    embed.token.table, embed.position.table
    layer{l}.gcm.{in_fc, self_attn, self_norm, obj_box_fc, obj_attn, obj_mlp,
                  sp_center_fc, sp_attn, sp_mlp, visual_norm, out_norm, out_mlp}
    layer{l}.lcm.{token_mlp, target_mlp, target_norm, obj_attn, obj_mlp,
                  sp_attn, sp_mlp, visual_norm, out_norm, out_mlp}
    layer{l}.fuse.{norm, ffn}
    head.out_proj

Ablated branches are never called, so their parameters are never created.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from contextcap.config import AblationFlags, ModelConfig
from contextcap.context import ContextSelection
from contextcap.detector import DetectionOutput
from contextcap.exceptions import DimensionError
from contextcap.layers import add_norm, attention, causal_mask, embedding, ffn, linear, mlp
from contextcap.parameters import ParameterSet
from contextcap.tensor import (
    Tensor,
    add,
    broadcast_rows,
    index_rows,
    log_softmax,
    no_grad,
    pick,
)
from contextcap.vocab import EOS, SOS

TEMPERATURE_FLOOR = 1e-4


@dataclass
class CaptionContext:
    """Everything one target's caption is conditioned on."""

    object_boxes: Tensor
    object_features: Tensor
    object_keep: np.ndarray
    superpoint_centers: Tensor
    superpoint_features: Tensor
    superpoint_keep: np.ndarray
    target_feature: Tensor
    neighbor_object_features: Tensor
    neighbor_superpoint_features: Tensor


def build_context(detection: DetectionOutput, selection: ContextSelection) -> CaptionContext:
    layout = detection.layout
    return CaptionContext(
        object_boxes=Tensor(layout.box_vectors),
        object_features=detection.candidate_features,
        object_keep=~layout.candidate_pad,
        superpoint_centers=Tensor(layout.superpoint_centers),
        superpoint_features=detection.superpoint_features,
        superpoint_keep=~layout.superpoint_pad,
        target_feature=index_rows(detection.candidate_features, [selection.target_index]),
        neighbor_object_features=index_rows(detection.candidate_features, list(selection.neighbor_objects)),
        neighbor_superpoint_features=index_rows(
            detection.superpoint_features, list(selection.neighbor_superpoints)
        ),
    )


@dataclass
class DecodeState:
    """Tokens fed so far and, per layer, the cached h' rows the self-attention reads."""

    tokens: List[int] = field(default_factory=list)
    caches: List[Optional[np.ndarray]] = field(default_factory=list)


class CaptionerModel:
    def __init__(
        self,
        params: ParameterSet,
        vocab_size: int,
        config: ModelConfig,
        ablation: Optional[AblationFlags] = None,
    ):
        self.params = params
        self.vocab_size = vocab_size
        self.config = config
        self.ablation = ablation or AblationFlags()

    @property
    def d_model(self) -> int:
        return self.config.d_model

    @property
    def max_positions(self) -> int:
        return self.config.max_caption_len + 2

    def _attend(self, q: Tensor, k: Tensor, v: Tensor, name: str, mask=None) -> Tensor:
        return attention(self.params, q, k, v, name, heads=self.config.heads, mask=mask)

    def _mlp(self, x: Tensor, name: str) -> Tensor:
        return mlp(self.params, x, name, expansion=self.config.expansion)

    def _norm(self, a: Tensor, b: Tensor, name: str) -> Tensor:
        return add_norm(self.params, a, b, name, eps=self.config.layer_norm_eps)

    def gcm_forward(
        self, h_prev: Tensor, ctx: CaptionContext, layer: int, past: Optional[np.ndarray] = None
    ) -> Tuple[Tensor, Tensor, Tensor]:
        """Global context modeling; returns (global representation, h_bar, h').

        ``past`` holds h' rows of earlier positions (incremental decoding,
        outside any tape); the new rows then attend to past + themselves.
        """
        p = f"layer{layer}.gcm"
        d = self.d_model
        rows = h_prev.shape[0]
        h_prime = linear(self.params, h_prev, f"{p}.in_fc", d)
        if past is None:
            keys, mask = h_prime, causal_mask(rows)
        else:
            offset = past.shape[0]
            keys = Tensor(np.concatenate([past, h_prime.data], axis=0))
            mask = np.tril(np.ones((rows, offset + rows), dtype=bool), k=offset)
        h_bar = self._norm(h_prime, self._attend(h_prime, keys, keys, f"{p}.self_attn", mask), f"{p}.self_norm")

        obj_mask = np.broadcast_to(ctx.object_keep, (rows, len(ctx.object_keep)))
        obj_embed = add(linear(self.params, ctx.object_boxes, f"{p}.obj_box_fc", d), ctx.object_features)
        enhanced_obj = self._mlp(
            self._attend(h_bar, obj_embed, ctx.object_features, f"{p}.obj_attn", obj_mask), f"{p}.obj_mlp"
        )
        if self.ablation.gcm_superpoints:
            sp_mask = np.broadcast_to(ctx.superpoint_keep, (rows, len(ctx.superpoint_keep)))
            sp_embed = add(
                linear(self.params, ctx.superpoint_centers, f"{p}.sp_center_fc", d), ctx.superpoint_features
            )
            enhanced_sp = self._mlp(
                self._attend(h_bar, sp_embed, ctx.superpoint_features, f"{p}.sp_attn", sp_mask), f"{p}.sp_mlp"
            )
            fused = self._norm(enhanced_obj, enhanced_sp, f"{p}.visual_norm")
        else:
            fused = enhanced_obj
        global_rep = self._mlp(self._norm(h_bar, fused, f"{p}.out_norm"), f"{p}.out_mlp")
        return global_rep, h_bar, h_prime

    def lcm_forward(self, h_bar: Tensor, ctx: CaptionContext, layer: int) -> Tensor:
        """Local context modeling around the target; neighbors enter through raw features only."""
        p = f"layer{layer}.lcm"
        target = self._mlp(ctx.target_feature, f"{p}.target_mlp")
        h_hat = self._norm(
            self._mlp(h_bar, f"{p}.token_mlp"), broadcast_rows(target, h_bar.shape[0]), f"{p}.target_norm"
        )
        nbr_obj = ctx.neighbor_object_features
        to_obj = self._mlp(self._attend(h_hat, nbr_obj, nbr_obj, f"{p}.obj_attn"), f"{p}.obj_mlp")
        if self.ablation.lcm_superpoints:
            nbr_sp = ctx.neighbor_superpoint_features
            to_sp = self._mlp(self._attend(h_hat, nbr_sp, nbr_sp, f"{p}.sp_attn"), f"{p}.sp_mlp")
            visual = self._norm(to_obj, to_sp, f"{p}.visual_norm")
        else:
            visual = to_obj
        return self._mlp(self._norm(h_hat, visual, f"{p}.out_norm"), f"{p}.out_mlp")

    def decoder_layer_forward(
        self, h_prev: Tensor, ctx: CaptionContext, layer: int, past: Optional[np.ndarray] = None
    ) -> Tuple[Tensor, Tensor]:
        """h_l = FFN(AddNorm(global, local)); returns (h_l, h') so callers can cache h'."""
        if not 0 <= layer < self.config.layers:
            raise DimensionError(f"layer{layer}", f"model has {self.config.layers} decoder layers")
        global_rep, h_bar, h_prime = self.gcm_forward(h_prev, ctx, layer, past)
        local_rep = self.lcm_forward(h_bar, ctx, layer) if self.ablation.lcm else global_rep
        fused = self._norm(global_rep, local_rep, f"layer{layer}.fuse.norm")
        return ffn(self.params, fused, f"layer{layer}.fuse.ffn", expansion=self.config.expansion), h_prime

    def embed(self, ids: Sequence[int], start: int = 0) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        positions = np.arange(start, start + len(ids))
        return add(
            embedding(self.params, ids, "embed.token", self.vocab_size, self.d_model),
            embedding(self.params, positions, "embed.position", self.max_positions, self.d_model),
        )

    def head(self, h: Tensor) -> Tensor:
        return linear(self.params, h, "head.out_proj", self.vocab_size)

    def forward_teacher_forced(self, tokens: Sequence[int], ctx: CaptionContext) -> Tensor:
        """Logits [T, V]; row t predicts token t + 1."""
        if not 0 < len(tokens) <= self.max_positions:
            raise DimensionError(
                "forward", f"sequence length {len(tokens)} outside [1, {self.max_positions}]"
            )
        h = self.embed(tokens)
        for layer in range(self.config.layers):
            h, _ = self.decoder_layer_forward(h, ctx, layer)
        return self.head(h)

    def new_state(self) -> DecodeState:
        return DecodeState(tokens=[], caches=[None] * self.config.layers)

    def advance(self, state: DecodeState, token: int, ctx: CaptionContext) -> np.ndarray:
        """Feed one token; returns the next-token logits."""
        position = len(state.tokens)
        if position >= self.max_positions:
            raise DimensionError("decode", f"position {position} exceeds {self.max_positions - 1}")
        state.tokens.append(int(token))
        h = self.embed([token], start=position)
        for layer in range(self.config.layers):
            h, h_prime = self.decoder_layer_forward(h, ctx, layer, past=state.caches[layer])
            cache = state.caches[layer]
            state.caches[layer] = h_prime.data if cache is None else np.concatenate([cache, h_prime.data])
        return self.head(h).data[0]

    def _limit(self, max_len: Optional[int]) -> int:
        return self.config.max_caption_len if max_len is None else min(max_len, self.config.max_caption_len)

    def greedy_decode(self, ctx: CaptionContext, max_len: Optional[int] = None) -> List[int]:
        """Argmax each step (lowest id on ties) until EOS or ``max_len`` words."""
        limit = self._limit(max_len)
        words: List[int] = []
        with no_grad():
            state = self.new_state()
            logits = self.advance(state, SOS, ctx)
            while len(words) < limit:
                token = int(np.argmax(logits))
                if token == EOS:
                    break
                words.append(token)
                if len(words) < limit:
                    logits = self.advance(state, token, ctx)
        return words

    @staticmethod
    def _draw(logits: np.ndarray, temperature: float, rng: np.random.Generator) -> int:
        if temperature < TEMPERATURE_FLOOR:
            return int(np.argmax(logits))
        z = logits / temperature
        probs = np.exp(z - z.max())
        probs /= probs.sum()
        return int(rng.choice(len(probs), p=probs))

    def sample_decode(
        self,
        ctx: CaptionContext,
        temperature: float,
        rng: np.random.Generator,
        max_len: Optional[int] = None,
    ) -> Tuple[List[int], Tensor]:
        """Multinomial sampling; returns (words, per-step log-probs).

        The log-probs cover every drawn token, EOS included, at temperature 1,
        and are recorded on the active tape when there is one.
        """
        limit = self._limit(max_len)
        drawn: List[int] = []
        with no_grad():
            state = self.new_state()
            logits = self.advance(state, SOS, ctx)
            while True:
                token = self._draw(logits, temperature, rng)
                drawn.append(token)
                if token == EOS or len(drawn) >= limit:
                    break
                logits = self.advance(state, token, ctx)
        words = drawn[:-1] if drawn[-1] == EOS else list(drawn)
        return words, self.sequence_log_probs(drawn, ctx)

    def sequence_log_probs(self, drawn: Sequence[int], ctx: CaptionContext) -> Tensor:
        """log p(drawn[t] | SOS, drawn[:t]) for every t, from one teacher-forced pass."""
        logits = self.forward_teacher_forced([SOS] + list(drawn[:-1]), ctx)
        return pick(log_softmax(logits), np.arange(len(drawn)), np.asarray(drawn))

    def build(self) -> None:
        """Create every parameter this configuration uses, in a fixed order."""
        d = self.d_model
        dummy = CaptionContext(
            object_boxes=Tensor(np.zeros((1, 6))),
            object_features=Tensor(np.zeros((1, d))),
            object_keep=np.ones(1, dtype=bool),
            superpoint_centers=Tensor(np.zeros((1, 3))),
            superpoint_features=Tensor(np.zeros((1, d))),
            superpoint_keep=np.ones(1, dtype=bool),
            target_feature=Tensor(np.zeros((1, d))),
            neighbor_object_features=Tensor(np.zeros((1, d))),
            neighbor_superpoint_features=Tensor(np.zeros((1, d))),
        )
        with no_grad():
            self.forward_teacher_forced([SOS], dummy)
