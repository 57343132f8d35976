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

from hypothesis import given
from hypothesis import strategies as st

from contextcap.vocab import EOS, PAD, RESERVED_TOKENS, SOS, UNK, Vocabulary, build_vocab, tokenize

words = st.lists(st.sampled_from(["red", "chair", "wall", "the", "left"]), max_size=12)


class TestTokenize:
    def test_lowercases_and_drops_punctuation(self):
        assert tokenize("This is a Red chair. It is next to the left wall.") == [
            "this", "is", "a", "red", "chair", "it", "is", "next", "to", "the", "left", "wall",
        ]

    @given(words)
    def test_tokenize_of_joined_words_is_identity(self, tokens):
        assert tokenize(" ".join(tokens)) == tokens


class TestVocabulary:
    def test_reserved_ids(self):
        vocab = Vocabulary()
        assert [vocab.id_of(t) for t in RESERVED_TOKENS] == [PAD, SOS, EOS, UNK]

    def test_build_orders_by_frequency_then_alphabet(self):
        vocab = build_vocab(["b a b", "c a b"])
        assert vocab.tokens[len(RESERVED_TOKENS):] == ["b", "a", "c"]

    def test_encode_pads_and_truncates(self):
        vocab = build_vocab(["red chair"])
        ids = vocab.encode(["red", "chair", "sofa"], max_len=2)
        assert ids == [SOS, vocab.id_of("red"), vocab.id_of("chair"), EOS]
        assert vocab.encode(["red"], max_len=3) == [SOS, vocab.id_of("red"), EOS, PAD, PAD]

    def test_unknown_words_map_to_unk(self):
        vocab = build_vocab(["red chair"])
        assert vocab.encode(["sofa"], max_len=1)[1] == UNK

    @given(words)
    def test_decode_inverts_encode_for_known_words(self, tokens):
        vocab = build_vocab(["red chair wall the left"])
        assert vocab.decode(vocab.encode(tokens, max_len=12)) == tokens
