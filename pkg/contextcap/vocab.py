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
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Union

PAD, SOS, EOS, UNK = 0, 1, 2, 3
RESERVED_TOKENS = ["<pad>", "<sos>", "<eos>", "<unk>"]
DEFAULT_MAX_LEN = 30

_NON_WORD = re.compile(r"[^a-z0-9\s]")


def tokenize(caption: str) -> List[str]:
    """Lowercase, drop punctuation, split on whitespace."""
    return _NON_WORD.sub(" ", caption.lower()).split()


@dataclass
class Vocabulary:
    """Token <-> id map; ids 0-3 are PAD, SOS, EOS and UNK."""

    tokens: List[str] = field(default_factory=lambda: list(RESERVED_TOKENS))
    _index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.tokens[: len(RESERVED_TOKENS)] != RESERVED_TOKENS:
            raise ValueError("vocabulary must start with the reserved tokens")
        self._index = {token: i for i, token in enumerate(self.tokens)}
        if len(self._index) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK)

    def encode(self, tokens: Sequence[str], max_len: int = DEFAULT_MAX_LEN) -> List[int]:
        """SOS + ids + EOS, truncated to ``max_len`` words and padded to max_len + 2."""
        ids = [SOS] + [self.id_of(t) for t in tokens[:max_len]] + [EOS]
        return ids + [PAD] * (max_len + 2 - len(ids))

    def decode(self, ids: Iterable[int]) -> List[str]:
        words = []
        for i in ids:
            i = int(i)
            if i == EOS:
                break
            if i in (PAD, SOS):
                continue
            words.append(self.tokens[i] if 0 <= i < len(self.tokens) else RESERVED_TOKENS[UNK])
        return words


def build_vocab(corpus: Iterable[Union[str, Sequence[str]]]) -> Vocabulary:
    """Tokens ordered by descending frequency, then lexicographically."""
    counts: Counter = Counter()
    for item in corpus:
        counts.update(tokenize(item) if isinstance(item, str) else item)
    for reserved in RESERVED_TOKENS:
        counts.pop(reserved, None)
    ordered = sorted(counts, key=lambda token: (-counts[token], token))
    return Vocabulary(tokens=list(RESERVED_TOKENS) + ordered)
