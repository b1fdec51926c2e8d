"""Rule-based answer extraction and outcome rewards."""
from __future__ import annotations

import re
import string
from dataclasses import dataclass, field

ANY_OF = "any_of"
ALL_OF = "all_of"

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = set(string.punctuation)
_PUNCT_RUN = re.compile("[" + re.escape(string.punctuation) + "]")
_NUMERIC = re.compile(r"^\d+( \d+)*$")
_BOX = "\\boxed{"


@dataclass(frozen=True)
class AnswerSet:
    answers: tuple[str, ...]
    mode: str = ANY_OF

    def __post_init__(self):
        object.__setattr__(self, "answers", tuple(self.answers))
        if self.mode not in (ANY_OF, ALL_OF):
            raise ValueError(f"unknown answer mode {self.mode!r}")
        if not self.answers:
            raise ValueError("answer set is empty")
        for a in self.answers:
            if not normalize_answer(a):
                raise ValueError(f"answer {a!r} is empty after normalization")


@dataclass
class RewardResult:
    score: float
    matched: list[bool] = field(default_factory=list)
    extracted_answer: str = ""
    extraction_ok: bool = False


def normalize_answer(text: str) -> str:
    """SQuAD-style normalization: lowercase, drop punctuation and articles, squeeze spaces."""
    text = text.lower()
    text = "".join(ch for ch in text if ch not in _PUNCT)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def is_equiv(a: str, b: str) -> bool:
    return normalize_answer(a) == normalize_answer(b)


def containment_form(text: str) -> str:
    # punctuation becomes a separator here so "123,456" yields two numbers
    return normalize_answer(_PUNCT_RUN.sub(" ", text))


def is_numeric_answer(answer: str) -> bool:
    return bool(_NUMERIC.match(containment_form(answer)))


def extract_boxed(completion: str) -> tuple[str, bool]:
    """Return the content of the last ``\\boxed{...}`` and whether it was found intact.

    Braces inside the box are matched. With no box the whole completion
    (stripped) is returned; with an unclosed box, everything after it.
    """
    start = completion.rfind(_BOX)
    if start < 0:
        return completion.strip(), False
    i = start + len(_BOX)
    depth = 1
    for j in range(i, len(completion)):
        ch = completion[j]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return completion[i:j].strip(), True
    return completion[i:].strip(), False


def contains_answer(pred: str, answer: str) -> bool:
    """Normalized containment; numeric answers must match whole tokens."""
    p = containment_form(pred)
    y = containment_form(answer)
    if not y:
        return False
    if _NUMERIC.match(y):
        return re.search(r"(?<!\S)" + re.escape(y) + r"(?!\S)", p) is not None
    return y in p


def reward_any_of(pred: str, answers: AnswerSet) -> RewardResult:
    extracted, ok = extract_boxed(pred)
    matched = [is_equiv(y, extracted) for y in answers.answers]
    return RewardResult(float(any(matched)), matched, extracted, ok)


def reward_all_of(pred: str, answers: AnswerSet) -> RewardResult:
    extracted, ok = extract_boxed(pred)
    matched = [contains_answer(extracted, y) for y in answers.answers]
    return RewardResult(sum(matched) / len(answers.answers), matched, extracted, ok)


def score(pred: str, answers: AnswerSet) -> RewardResult:
    if answers.mode == ANY_OF:
        return reward_any_of(pred, answers)
    return reward_all_of(pred, answers)


def near_miss(pred: str, answers: AnswerSet) -> bool:
    """Flag failed predictions that still overlap an answer token-wise.

    Reports use this to surface formatting disagreements such as
    "4 million" vs "4000000", which the verifier does not reconcile.
    """
    extracted, _ = extract_boxed(pred)
    res = score(pred, answers)
    if res.score == 1.0:
        return False
    p = containment_form(extracted)
    for y in answers.answers:
        y_norm = containment_form(y)
        if y_norm and (y_norm.replace(" ", "") == p.replace(" ", "") or
                       set(y_norm.split()) & set(p.split())):
            return True
    return False
