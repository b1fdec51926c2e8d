"""Pluggable token counters.

Every counter exposes ``spans(text)``, the (start, end) character offsets of
its tokens, and ``count(text)``. Chunking cuts only at span starts, so the
text between two cuts is always re-countable with the same counter.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

_WORD = re.compile(r"\S+")


class TokenizerConfigError(ValueError):
    """Raised when a counter cannot be built from its configuration."""


@dataclass(frozen=True)
class TokenCounter:
    """Deterministic token counter.

    ``mode`` is one of ``whitespace``, ``chars_div_4`` or ``external_vocab``.
    For ``external_vocab`` the vocabulary file holds one token per line and
    each whitespace-delimited word is segmented into the fewest vocabulary
    pieces (unknown characters cost one token each).
    """

    mode: str = "whitespace"
    vocab_path: str | None = None
    _vocab: frozenset = field(default=frozenset(), repr=False, compare=False)
    _max_piece: int = field(default=1, repr=False, compare=False)

    def __post_init__(self):
        if self.mode not in ("whitespace", "chars_div_4", "external_vocab"):
            raise TokenizerConfigError(f"unknown token counter mode {self.mode!r}")
        if self.mode == "external_vocab":
            if self.vocab_path is None:
                raise TokenizerConfigError("external_vocab mode needs vocab_path")
            try:
                lines = Path(self.vocab_path).read_text(encoding="utf-8").splitlines()
            except OSError as exc:
                raise TokenizerConfigError(f"cannot read vocabulary {self.vocab_path}: {exc}") from exc
            vocab = frozenset(tok for tok in lines if tok and not tok.isspace())
            object.__setattr__(self, "_vocab", vocab)
            object.__setattr__(self, "_max_piece", max((len(t) for t in vocab), default=1))

    def spans(self, text: str) -> list[tuple[int, int]]:
        if self.mode == "whitespace":
            return [m.span() for m in _WORD.finditer(text)]
        if self.mode == "chars_div_4":
            return [(i, min(i + 4, len(text))) for i in range(0, len(text), 4)]
        out = []
        for m in _WORD.finditer(text):
            start = m.start()
            for a, b in self._segment(m.group()):
                out.append((start + a, start + b))
        return out

    def starts(self, text: str) -> list[int]:
        """Token start offsets only; cheaper than ``spans`` on long texts."""
        if self.mode == "whitespace":
            return [m.start() for m in _WORD.finditer(text)]
        if self.mode == "chars_div_4":
            return list(range(0, len(text), 4))
        return [a for a, _ in self.spans(text)]

    def count(self, text: str) -> int:
        if self.mode == "whitespace":
            return sum(1 for _ in _WORD.finditer(text))
        if self.mode == "chars_div_4":
            return math.ceil(len(text) / 4)
        return len(self.spans(text))

    def truncate(self, text: str, max_tokens: int) -> tuple[str, bool]:
        """Cut ``text`` after its first ``max_tokens`` tokens.

        Returns the (possibly shortened) text and whether anything was cut.
        """
        if max_tokens <= 0:
            return "", bool(text)
        spans = self.spans(text)
        if len(spans) <= max_tokens:
            return text, False
        return text[: spans[max_tokens - 1][1]], True

    def _segment(self, word: str) -> list[tuple[int, int]]:
        # fewest-pieces segmentation; single characters are always allowed
        n = len(word)
        best = [0] + [n + 1] * n
        back = [0] * (n + 1)
        for end in range(1, n + 1):
            for start in range(max(0, end - self._max_piece), end):
                piece_ok = end - start == 1 or word[start:end] in self._vocab
                if piece_ok and best[start] + 1 < best[end]:
                    best[end] = best[start] + 1
                    back[end] = start
        pieces = []
        end = n
        while end > 0:
            pieces.append((back[end], end))
            end = back[end]
        return pieces[::-1]


def count_tokens(counter: TokenCounter, text: str) -> int:
    return counter.count(text)


WHITESPACE = TokenCounter("whitespace")
