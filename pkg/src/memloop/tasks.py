"""Synthetic long-context tasks: needle retrieval, variable tracking, frequent words, haystack QA.

All generators are pure functions of their arguments and ``seed``.
"""
from __future__ import annotations

import bisect
import json
import logging
import random
import re
import string
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .templates import ANSWER_TEMPLATE, EMPTY_MEMORY, fill
from .tokens import WHITESPACE, TokenCounter
from .verifiers import ALL_OF, ANY_OF, AnswerSet, score

logger = logging.getLogger(__name__)

NIAH_FAMILIES = (
    "niah_single_1", "niah_single_2", "niah_single_3",
    "niah_multikey_1", "niah_multikey_2", "niah_multikey_3",
    "niah_multiquery", "niah_multivalue",
)
FAMILIES = NIAH_FAMILIES + ("variable_tracking", "freq_words", "qa_haystack")
ALL_OF_FAMILIES = ("niah_multivalue", "niah_multiquery", "variable_tracking", "freq_words")
RETRIEVAL_FAMILIES = NIAH_FAMILIES + ("variable_tracking", "qa_haystack")

NEEDLE = "One of the special magic numbers for {key} is: {value}."
NEEDLE_RE = re.compile(r"One of the special magic numbers for (?P<key>[\w-]+) is: (?P<value>[\w-]+)\.")
VAR_RE = re.compile(r"VAR (?P<name>[A-Z]+) = (?P<rhs>[A-Z]+|\d+)\.")
VT_VALUE_RE = re.compile(r"assigned the value (?P<value>\d+)")

NOISE = ("The grass is green. The sky is blue. The sun is yellow. "
         "Here we go. There and back again.")

_ESSAY = """\
Most good ideas look like bad ideas at first, which is why so few people pursue them.
The hard part of starting anything is not the work itself but deciding that the work is worth doing.
A small group of people who care about a problem will usually outpace a large group that does not.
Writing forces you to find out what you actually think, because vague thoughts do not survive a sentence.
When you build something for yourself, you at least know that one user wants it.
The best way to learn a field is to try to make something new in it and notice where you get stuck.
Cities tend to reward a particular kind of ambition, and the message they send is hard to ignore.
Many habits that seem like laziness are really a reasonable response to uncertainty.
It is easier to make a product people love if you start with a narrow group and serve them well.
People rarely change their minds in an argument, but they often change them a week later.
Tools shape the way we think, so switching tools can feel like learning to think again.
A surprising number of important discoveries were made by people working on something else.
The quality of a question often matters more than the cleverness of the answer.
Early versions of most things are embarrassing, and that is usually a sign you shipped on time.
Reading widely gives you a supply of analogies that specialists tend to lack.
Good design is often a matter of removing things until only the essential parts remain.
Conversations with curious people are one of the cheapest sources of new ideas.
Most of what passes for planning is really a way of feeling less anxious about the future.
Careful observation of ordinary things is underrated as a research method.
The people who do great work are usually the ones who kept going after it stopped being fun.
An essay is a way of trying out an idea to see whether it holds up.
Ambitious projects fail in interesting ways, while timid ones fail quietly.
You can often tell how well someone understands a topic by how simply they explain it.
Keeping a notebook turns stray thoughts into material you can build on later.
Small improvements compound, and after a few years the difference becomes obvious.
Schools teach students to solve problems that someone else has already chosen for them.
The most useful feedback usually comes from people who have nothing to gain from flattering you.
Curiosity is easier to sustain when you give yourself permission to follow tangents.
The history of technology is full of inventions whose main use turned out to be unexpected.
Taste develops slowly, mostly by looking at a great deal of work and asking why some of it is better.
"""
ESSAY_SENTENCES = tuple(s for s in _ESSAY.splitlines() if s)

_ADJECTIVES = """
able acid aged airy ample angry arid artsy ashen awake bad bald barren basic bent big bitter
black bland blue bold bony brave brief bright brisk broad broken brown bumpy busy calm cheap
chief chilly civil clean clear close cold cool coral cosmic crazy crisp cruel curly cute damp
dark dear deep dense dizzy dry dull dusty eager early easy elder empty epic equal even exact
faint fair false fancy fast fat fierce fine firm flat fond foolish frail free fresh full fuzzy
giant glad gold good grand gray great green grim gross happy hard harsh hasty heavy hollow
honest huge humble hungry icy idle ill jolly juicy keen kind large late lazy lean light little
live lone long loose loud lucky lush mad major merry mild minor misty modern moist muddy mute
narrow neat new nice noble noisy odd old open pale plain plump polite poor proud pure quick
quiet rapid rare raw real red rich ripe rough round royal rude rusty sad safe salty sandy
scary shaky sharp shiny short shy silent silky silly simple sleek slim slow small smart smooth
soft solid sour spare spicy stale steep stiff still stormy strong sunny super sweet swift tall
tame tart tender thick thin tidy tiny tough true ugly vast warm wary weak wet white whole wide
wild windy wise witty wooden young zany
""".split()

_NOUNS = """
acorn actor agent alarm album alley anchor angle ankle apple apron arch arena armor arrow
atlas attic award bacon badge bagel baker ballet bamboo banjo barn basket beach beacon beard
bell bench berry bicycle blade blanket blender bonnet book border bottle boulder bracket brick
bridge broom bubble bucket buffalo bugle cabin cable cactus camera candle canoe canyon carpet
castle cellar chair chalk charm cherry chimney cider circus clock cloud coach coast cobra comet
compass copper cottage cradle crayon cricket crown crystal cupboard curtain dagger daisy desert
diamond dinner dolphin donkey dragon drawer drum eagle easel elbow ember engine falcon feather
fence ferry fiddle finch flag flute forest fossil fountain fox garden garlic gate giraffe glacier
glove goat goose granite grape guitar hammer harbor harp helmet hermit hill hornet horse island
jacket jaguar jelly jewel kettle kitten ladder lagoon lantern lemon lettuce lily lizard lobster
locket magnet mango maple marble meadow melon mirror mitten monkey mosaic motor muffin napkin
needle nest nugget oasis ocean olive onion orchid otter oven owl paddle palace panda parcel
parrot peach pebble pencil pepper piano pillow pilot pirate planet plum pocket pony puzzle
quartz quilt rabbit radio raft raven ribbon river robin rocket saddle salmon sandal scarf
scooter shadow shelf shovel signal silver sketch sled spider spoon stable station statue
stove sugar summit swan sweater table tablet teapot temple thistle thunder ticket tiger timber
toast tomato tower tractor trumpet tulip tunnel turtle umbrella valley velvet violin wagon
walnut walrus whale whistle willow window wizard yacht zebra
""".split()


class GenerationError(ValueError):
    """A task instance could not be generated with the requested parameters."""


@dataclass
class TaskInstance:
    instance_id: str
    family: str
    context: str
    question: str
    answers: list[str]
    answer_mode: str
    target_token_count: int
    golden_positions: list[int] = field(default_factory=list)
    tags: dict = field(default_factory=dict)

    @property
    def answer_set(self) -> AnswerSet:
        return AnswerSet(tuple(self.answers), self.answer_mode)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TaskInstance":
        return cls(**d)


@dataclass
class CorpusArticle:
    article_id: str
    title: str
    text: str
    token_count: int = 0


@dataclass(frozen=True)
class LengthSchedule:
    values: tuple[int, ...]
    unit: str = "tokens"

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if not self.values or any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ValueError(f"length schedule must be strictly increasing: {self.values}")

    @classmethod
    def doubling(cls, start: int, stop: int, unit: str = "tokens") -> "LengthSchedule":
        vals = []
        v = start
        while v <= stop:
            vals.append(v)
            v *= 2
        return cls(tuple(vals), unit)

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)


ARTICLE_SCHEDULE = LengthSchedule.doubling(50, 6400, unit="articles")
TOKEN_SCHEDULE = LengthSchedule.doubling(8 * 1024, 512 * 1024)


def read_corpus(path, counter: TokenCounter = WHITESPACE) -> list[CorpusArticle]:
    """Load a corpus JSONL (``article_id``, ``title``, ``text`` per line)."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                art = CorpusArticle(str(rec["article_id"]), str(rec.get("title", "")), rec["text"])
            except (ValueError, KeyError, TypeError) as exc:
                raise GenerationError(f"{path}:{lineno}: bad corpus record: {exc}") from exc
            if not isinstance(art.text, str) or not art.text.strip():
                raise GenerationError(f"{path}:{lineno}: article text is empty")
            art.token_count = counter.count(art.text)
            out.append(art)
    return out


def _check_length(context: str, target: int, counter: TokenCounter) -> int:
    actual = counter.count(context)
    if abs(actual - target) > 0.02 * target:
        raise GenerationError(f"generated {actual} tokens for target {target} (outside 2%)")
    return actual


def _filler_sentences(source: str, rng: random.Random, custom: Sequence[str] | None):
    """Endless sentence stream for the haystack."""
    if source == "noise":
        pieces = [s.strip() + "." for s in NOISE.split(".") if s.strip()]
        while True:
            yield from pieces
    pool = list(custom) if custom else list(ESSAY_SENTENCES)
    i = rng.randrange(len(pool))
    while True:
        # essays are read in order from a random start, reshuffled per pass
        yield pool[i]
        i += 1
        if i == len(pool):
            rng.shuffle(pool)
            i = 0


def _weave(sentences: list[str], n_words: int, needles: list[str], depths: list[float]):
    words: list[str] = []
    bounds = [0]
    for s in sentences:
        for w in s.split():
            if len(words) == n_words:
                break
            words.append(w)
        bounds.append(len(words))
        if len(words) == n_words:
            break
    slots = [bounds[bisect.bisect_right(bounds, d * len(words)) - 1] for d in depths]
    order = sorted(range(len(needles)), key=lambda k: (slots[k], k))
    parts: list[str] = []
    positions = [0] * len(needles)
    offset = 0
    prev = 0
    for k in order:
        chunk = " ".join(words[prev:slots[k]])
        if chunk:
            parts.append(chunk)
            offset += len(chunk) + 1
        positions[k] = offset
        parts.append(needles[k])
        offset += len(needles[k]) + 1
        prev = slots[k]
    tail = " ".join(words[prev:])
    if tail:
        parts.append(tail)
    return " ".join(parts), positions


def _haystack(needles: list[str], depths: list[float], target: int, counter: TokenCounter,
              rng: random.Random, source: str = "essay", custom=None, filler=None):
    """Fill ``target`` tokens with filler text and insert the needles at the given depths."""
    needle_tokens = sum(counter.count(n) for n in needles)
    if needle_tokens >= target:
        raise GenerationError(f"target {target} tokens cannot hold {needle_tokens} needle tokens")
    stream = filler if filler is not None else _filler_sentences(source, rng, custom)
    sentences: list[str] = []
    have = 0
    need = (target - needle_tokens) * 2 if counter.mode != "whitespace" else target - needle_tokens
    while have < need:
        s = next(stream)
        sentences.append(s)
        have += len(s.split())
    if counter.mode == "whitespace":
        context, pos = _weave(sentences, target - needle_tokens, needles, depths)
        return context, pos
    lo, hi = 0, have
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if counter.count(_weave(sentences, mid, needles, depths)[0]) <= target:
            lo = mid
        else:
            hi = mid - 1
    return _weave(sentences, lo, needles, depths)


def _word_keys(rng: random.Random, n: int, taken: set) -> list[str]:
    keys = []
    for _ in range(n):
        for _attempt in range(100):
            k = f"{rng.choice(_ADJECTIVES)}-{rng.choice(_NOUNS)}"
            if k not in taken:
                break
        else:
            raise GenerationError("could not draw a unique key; key space exhausted")
        taken.add(k)
        keys.append(k)
    return keys


def _uuid(rng: random.Random) -> str:
    return str(uuid.UUID(int=rng.getrandbits(128), version=4))


def _number(rng: random.Random, digits: int = 7) -> str:
    return str(rng.randint(10 ** (digits - 1), 10 ** digits - 1))


_NIAH_LAYOUT = {
    # family: (haystack, key kind, value kind, distractor needles, queried keys, values per key)
    "niah_single_1": ("noise", "words", "numbers", 0, 1, 1),
    "niah_single_2": ("essay", "words", "numbers", 0, 1, 1),
    "niah_single_3": ("essay", "words", "uuids", 0, 1, 1),
    "niah_multikey_1": ("essay", "words", "numbers", 3, 1, 1),
    "niah_multikey_2": ("needle", "words", "numbers", 0, 1, 1),
    "niah_multikey_3": ("needle", "uuids", "uuids", 0, 1, 1),
    "niah_multiquery": ("essay", "words", "numbers", 0, 4, 1),
    "niah_multivalue": ("essay", "words", "numbers", 0, 1, 4),
}


def gen_niah(family: str, target_tokens: int, seed: int, haystack_source: str | None = None,
             num_distractor_needles: int | None = None, num_queries_or_values: int | None = None,
             counter: TokenCounter = WHITESPACE, essay_sentences: Sequence[str] | None = None,
             instance_id: str | None = None) -> TaskInstance:
    """Needle-in-a-haystack instance.

    ``haystack_source`` is ``noise``, ``essay`` or ``needle`` (a haystack made
    entirely of distractor needles); each family has a default.
    """
    if family not in _NIAH_LAYOUT:
        raise GenerationError(f"not a needle family: {family}")
    hay, key_kind, value_kind, n_distract, n_queries, n_values = _NIAH_LAYOUT[family]
    hay = haystack_source or hay
    if num_distractor_needles is not None:
        n_distract = num_distractor_needles
    if num_queries_or_values is not None:
        if family == "niah_multiquery":
            n_queries = num_queries_or_values
        elif family == "niah_multivalue":
            n_values = num_queries_or_values
    rng = random.Random(f"niah|{family}|{target_tokens}|{seed}")
    taken: set = set()

    def draw_keys(n):
        if key_kind == "uuids":
            return [_uuid(rng) for _ in range(n)]
        return _word_keys(rng, n, taken)

    def draw_value():
        return _uuid(rng) if value_kind == "uuids" else _number(rng)

    keys = draw_keys(n_queries)
    needles, answers = [], []
    for k in keys:
        for _ in range(n_values):
            v = draw_value()
            while v in answers:
                v = draw_value()
            needles.append(NEEDLE.format(key=k, value=v))
            answers.append(v)
    n_real = len(needles)
    for k in draw_keys(n_distract):
        needles.append(NEEDLE.format(key=k, value=draw_value()))
    depths = [rng.random() for _ in needles]

    filler = None
    if hay == "needle":
        def needle_stream():
            while True:
                yield NEEDLE.format(key=draw_keys(1)[0], value=draw_value())
        filler = needle_stream()
    context, positions = _haystack(needles, depths, target_tokens, counter, rng, hay,
                                   essay_sentences, filler)
    _check_length(context, target_tokens, counter)

    if family == "niah_multiquery":
        question = ("What are all the special magic numbers for " + ", ".join(keys[:-1]) +
                    f", and {keys[-1]} mentioned in the provided text?")
    elif family == "niah_multivalue":
        question = f"What are all the special magic numbers for {keys[0]} mentioned in the provided text?"
    else:
        question = f"What is the special magic number for {keys[0]} mentioned in the provided text?"
    mode = ALL_OF if family in ALL_OF_FAMILIES else ANY_OF
    return TaskInstance(instance_id or f"{family}-{target_tokens}-{seed}", family, context, question,
                        answers, mode, target_tokens, positions[:n_real])


def _var_names(rng: random.Random, n: int) -> list[str]:
    names: list[str] = []
    while len(names) < n:
        name = "".join(rng.choice(string.ascii_uppercase) for _ in range(5))
        if name not in names:
            names.append(name)
    return names


def gen_variable_tracking(chain_length: int, num_chains: int, target_tokens: int, seed: int,
                          counter: TokenCounter = WHITESPACE,
                          instance_id: str | None = None) -> TaskInstance:
    """Variable-tracking instance: the first chain is queried, the rest are decoys."""
    if chain_length < 1 or num_chains < 1:
        raise GenerationError("chain_length and num_chains must be >= 1")
    rng = random.Random(f"vt|{chain_length}|{num_chains}|{target_tokens}|{seed}")
    names = _var_names(rng, chain_length * num_chains)
    values: list[str] = []
    while len(values) < num_chains:
        v = _number(rng, 5)
        if v not in values:
            values.append(v)
    statements, depths = [], []
    for c in range(num_chains):
        chain = names[c * chain_length:(c + 1) * chain_length]
        ds = sorted(rng.random() for _ in chain)
        for i, name in enumerate(chain):
            rhs = values[c] if i == 0 else chain[i - 1]
            statements.append(f"VAR {name} = {rhs}.")
            depths.append(ds[i])
    context, positions = _haystack(statements, depths, target_tokens, counter, rng, "noise")
    _check_length(context, target_tokens, counter)
    question = f"Find all variables that are assigned the value {values[0]} in the text above."
    return TaskInstance(instance_id or f"variable_tracking-{target_tokens}-{seed}", "variable_tracking",
                        context, question, names[:chain_length], ALL_OF, target_tokens,
                        positions[:chain_length])


def _coded_words(rng: random.Random, n: int) -> list[str]:
    words: list[str] = []
    seen = set()
    while len(words) < n:
        w = "".join(rng.choice(string.ascii_lowercase) for _ in range(rng.randint(5, 8)))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def gen_freq_words(alpha: float = 2.0, vocab_size: int = 1000, num_tokens: int = 10_000, top_k: int = 3,
                   seed: int = 0, counter: TokenCounter = WHITESPACE, max_retries: int = 20,
                   instance_id: str | None = None) -> TaskInstance:
    """Frequent-words instance over a truncated zeta(alpha) rank distribution."""
    if alpha <= 1:
        raise GenerationError("alpha must exceed 1")
    if not 0 < top_k < vocab_size:
        raise GenerationError("need 0 < top_k < vocab_size")
    rng = random.Random(f"fwe|{alpha}|{vocab_size}|{num_tokens}|{top_k}|{seed}")
    vocab = _coded_words(rng, vocab_size)
    ranks = np.arange(1, vocab_size + 1, dtype=np.float64)
    probs = ranks ** -alpha
    probs /= probs.sum()
    gen = np.random.default_rng(rng.getrandbits(63))
    n_words = num_tokens
    if counter.mode != "whitespace":
        per_word = counter.count(" ".join(vocab[:50])) / 50
        n_words = max(1, round(num_tokens / per_word))
    for _ in range(max_retries):
        idx = gen.choice(vocab_size, size=n_words, p=probs)
        counts = np.bincount(idx, minlength=vocab_size)
        order = sorted(range(vocab_size), key=lambda r: (-counts[r], r))
        separated = counts[order[top_k - 1]] > counts[order[top_k]]
        if separated and set(order[:top_k]) == set(range(top_k)):
            break
    else:
        raise GenerationError(f"no frequency separation at rank {top_k} after {max_retries} draws; "
                              "try a larger num_tokens")
    context = " ".join(vocab[i] for i in idx)
    _check_length(context, num_tokens, counter)
    question = f"What are the {top_k} most frequently appeared coded words in the above text?"
    answers = [vocab[r] for r in order[:top_k]]
    return TaskInstance(instance_id or f"freq_words-{num_tokens}-{seed}", "freq_words", context, question,
                        answers, ALL_OF, num_tokens)


def format_article(index: int, art: CorpusArticle) -> str:
    return f"Document {index}:\n{art.title}\n{art.text}"


def build_qa_haystack(question: str, answers: Sequence[str], golden_articles: Sequence[CorpusArticle],
                      distractor_pool: Sequence[CorpusArticle], n_articles: int, seed: int,
                      counter: TokenCounter = WHITESPACE, instance_id: str | None = None) -> TaskInstance:
    """Hide the golden articles among ``n_articles - len(golden)`` sampled distractors."""
    if n_articles < len(golden_articles):
        raise GenerationError(f"n_articles={n_articles} is below the {len(golden_articles)} golden articles")
    golden_ids = {a.article_id for a in golden_articles}
    pool = sorted({a.article_id: a for a in distractor_pool if a.article_id not in golden_ids}.values(),
                  key=lambda a: a.article_id)
    need = n_articles - len(golden_articles)
    if need > len(pool):
        raise GenerationError(f"distractor pool short by {need - len(pool)} articles "
                              f"({len(pool)} available, {need} needed)")
    rng = random.Random(f"qa|{question}|{n_articles}|{seed}")
    chosen = list(golden_articles) + rng.sample(pool, need)
    rng.shuffle(chosen)
    parts, positions, offset = [], [], 0
    for i, art in enumerate(chosen, 1):
        block = format_article(i, art)
        if art.article_id in golden_ids:
            positions.append(offset)
        parts.append(block)
        offset += len(block) + 2
    context = "\n\n".join(parts)
    return TaskInstance(instance_id or f"qa_haystack-{n_articles}-{seed}", "qa_haystack", context, question,
                        list(answers), ANY_OF, counter.count(context), positions,
                        {"n_articles": n_articles})


def generate(family: str, target_tokens: int, seed: int, counter: TokenCounter = WHITESPACE,
             **params) -> TaskInstance:
    """Dispatch to the generator for any synthetic family (``qa_haystack`` excluded)."""
    if family in NIAH_FAMILIES:
        return gen_niah(family, target_tokens, seed, counter=counter, **params)
    if family == "variable_tracking":
        return gen_variable_tracking(params.get("chain_length", 4), params.get("num_chains", 2),
                                     target_tokens, seed, counter=counter,
                                     instance_id=params.get("instance_id"))
    if family == "freq_words":
        return gen_freq_words(params.get("alpha", 2.0), params.get("vocab_size", 1000), target_tokens,
                              params.get("top_k", 3), seed, counter=counter,
                              instance_id=params.get("instance_id"))
    raise GenerationError(f"unknown synthetic family {family!r}")


@dataclass
class FilterReport:
    kept: list[TaskInstance]
    dropped: list[TaskInstance]
    unfiltered: list[TaskInstance]

    @property
    def drop_rate(self) -> float:
        total = len(self.kept) + len(self.dropped)
        return len(self.dropped) / total if total else 0.0


def no_context_prompt(question: str) -> str:
    return fill(ANSWER_TEMPLATE, prompt=question, memory=EMPTY_MEMORY)


def filter_known_questions(samples: Iterable[TaskInstance], gateway, attempts: int = 2) -> FilterReport:
    """Drop samples the model answers correctly without context in any of ``attempts`` tries.

    Samples whose queries fail at the gateway are kept but tagged ``unfiltered``.
    """
    from .gateway import GatewayError

    report = FilterReport([], [], [])
    for inst in samples:
        prompt = no_context_prompt(inst.question)
        try:
            known = False
            for _ in range(attempts):
                if score(gateway.complete(prompt).text, inst.answer_set).score >= 1.0:
                    known = True
                    break
        except GatewayError as exc:
            logger.warning("filter query failed for %s: %s", inst.instance_id, exc)
            inst.tags = {**inst.tags, "filter": "unfiltered"}
            report.kept.append(inst)
            report.unfiltered.append(inst)
            continue
        if known:
            report.dropped.append(inst)
        else:
            inst.tags = {**inst.tags, "filter": "passed"}
            report.kept.append(inst)
    logger.info("filter dropped %d of %d samples", len(report.dropped),
                len(report.dropped) + len(report.kept))
    return report


def write_dataset(path, instances: Iterable[TaskInstance]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


def read_dataset(path) -> list[TaskInstance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(TaskInstance.from_dict(json.loads(line)))
            except (ValueError, TypeError) as exc:
                raise GenerationError(f"{path}:{lineno}: bad task record: {exc}") from exc
    return out


def dataset_path(out_dir, family: str, length: int) -> Path:
    return Path(out_dir) / f"{family}_{length}.jsonl"
