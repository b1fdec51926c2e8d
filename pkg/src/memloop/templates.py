"""Prompt templates for the memory-update and answer conversations."""
from __future__ import annotations

import re

EMPTY_MEMORY = "No previous memory."

MEMORY_UPDATE_TEMPLATE = (
    "You are presented with a problem, a section of an article that may contain "
    "the answer, and a previous memory. Please read the section carefully and "
    "update the memory with new information that helps to answer the problem, "
    "while retaining all relevant details from the previous memory.\n"
    "\n"
    "<problem> {prompt} </problem>\n"
    "\n"
    "<memory> {memory} </memory>\n"
    "\n"
    "<section> {chunk} </section>\n"
    "\n"
    "Updated memory:"
)

ANSWER_TEMPLATE = (
    "You are presented with a problem and a previous memory. Please answer the "
    "problem based on the previous memory and put the answer in \\boxed{}.\n"
    "\n"
    "<problem> {prompt} </problem>\n"
    "\n"
    "<memory> {memory} </memory>\n"
    "\n"
    "Your answer:"
)

TAGS = ("problem", "memory", "section")
_PLACEHOLDER = re.compile(r"\{(prompt|memory|chunk)\}")


def fill(template: str, **values: str) -> str:
    # one pass, so placeholder-like text inside values is never re-substituted
    return _PLACEHOLDER.sub(lambda m: values[m.group(1)], template)


def _parser(template: str) -> re.Pattern:
    parts = []
    pos = 0
    for m in _PLACEHOLDER.finditer(template):
        parts.append(re.escape(template[pos:m.start()]))
        parts.append(f"(?P<{m.group(1)}>.*?)")
        pos = m.end()
    parts.append(re.escape(template[pos:]))
    return re.compile("".join(parts), re.DOTALL)


_MEMORY_PARSER = _parser(MEMORY_UPDATE_TEMPLATE)
_ANSWER_PARSER = _parser(ANSWER_TEMPLATE)


def parse_prompt(prompt: str) -> tuple[str, dict[str, str]] | None:
    """Recover the kind and placeholder values of a rendered prompt.

    Returns ``("memory_update", {...})``, ``("answer", {...})`` or None when
    the text was not produced by either template.
    """
    m = _MEMORY_PARSER.fullmatch(prompt)
    if m:
        return "memory_update", m.groupdict()
    m = _ANSWER_PARSER.fullmatch(prompt)
    if m:
        return "answer", m.groupdict()
    return None


def tag_collisions(text: str) -> list[str]:
    """Template tags that appear literally inside user-supplied text."""
    found = []
    for tag in TAGS:
        for form in (f"<{tag}>", f"</{tag}>"):
            if form in text:
                found.append(form)
    return found


def template_overhead(counter, template: str = MEMORY_UPDATE_TEMPLATE) -> int:
    """Token cost of a template with every placeholder left empty."""
    return counter.count(fill(template, prompt="", memory="", chunk=""))
