"""Parsing and normalization of the tagged output format.

Every generation is expected to follow the template

    <think>...</think><spiegazione>...</spiegazione><risposta>...</risposta>

Parsing is strict: tags are case-sensitive, attribute-free literals, the
first open/close pair of each tag wins, and duplicated pairs or unclosed
tags mark the output as structurally invalid.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

TAGS = ("think", "spiegazione", "risposta")

# Tags required for a structurally valid output (think is rewarded separately).
REQUIRED_TAGS = ("spiegazione", "risposta")

COMPLETION_TEMPLATE = (
    "<think>{think}</think>"
    "<spiegazione>{spiegazione}</spiegazione>"
    "<risposta>{risposta}</risposta>"
)

_WS_RUN = re.compile(r"\s+")


@dataclass(frozen=True)
class TaggedOutput:
    """Fields extracted from a raw generation.

    A field is None iff no matching open/close pair was found.
    structurally_valid is True iff both <spiegazione> and <risposta> appear
    exactly once each, correctly closed and non-overlapping.
    """

    think: str | None = None
    spiegazione: str | None = None
    risposta: str | None = None
    structurally_valid: bool = False


def _find_pairs(text: str, tag: str) -> list[tuple[int, int, str]]:
    """All well-formed <tag>...</tag> pairs as (start, end, inner) spans.

    Pairs are matched greedily left to right: each open tag is paired with
    the nearest close tag after it; nesting of a tag within itself is not
    part of the format and is treated as malformed content.
    """
    open_tok = f"<{tag}>"
    close_tok = f"</{tag}>"
    pairs = []
    pos = 0
    while True:
        start = text.find(open_tok, pos)
        if start < 0:
            break
        inner_start = start + len(open_tok)
        end = text.find(close_tok, inner_start)
        if end < 0:
            break
        pairs.append((start, end + len(close_tok), text[inner_start:end]))
        pos = end + len(close_tok)
    return pairs


def parse_tagged(text: str) -> TaggedOutput:
    """Extract tag contents from arbitrary text. Never raises.

    The first pair of each tag supplies the field; any duplicate pair or
    overlap between the required tags voids structurally_valid.
    """
    fields: dict[str, str | None] = {}
    spans: dict[str, tuple[int, int]] = {}
    duplicated = False
    for tag in TAGS:
        pairs = _find_pairs(text, tag)
        if pairs:
            start, end, inner = pairs[0]
            fields[tag] = inner
            spans[tag] = (start, end)
            if len(pairs) > 1:
                duplicated = True
        else:
            fields[tag] = None

    valid = all(fields[tag] is not None for tag in REQUIRED_TAGS) and not duplicated
    if valid:
        a = spans["spiegazione"]
        b = spans["risposta"]
        valid = a[1] <= b[0] or b[1] <= a[0]

    return TaggedOutput(
        think=fields["think"],
        spiegazione=fields["spiegazione"],
        risposta=fields["risposta"],
        structurally_valid=valid,
    )


def render_tagged(think: str = "", spiegazione: str = "", risposta: str = "") -> str:
    """Fill the canonical completion template."""
    return COMPLETION_TEMPLATE.format(
        think=think, spiegazione=spiegazione, risposta=risposta
    )


def normalize_answer(text: str) -> str:
    """Canonical answer form: trimmed, whitespace runs collapsed, case-folded."""
    return _WS_RUN.sub(" ", text.strip()).casefold()
