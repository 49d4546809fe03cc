"""Splitting lemma names and statement tokens into naming sub-tokens.

A name like ``extprod_mulgA`` decomposes into the pieces a naming
convention actually manipulates: words, underscores, digit runs, symbol
runs, and single-letter suffixes drawn from a lexicon of conventional
markers (by default A, C, g). Splitting is lossless: concatenating the
sub-token texts reproduces the input exactly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

WORD = "word"
UNDERSCORE = "underscore"
SUFFIX_LETTER = "suffix_letter"
DIGIT_RUN = "digit_run"
SYMBOL = "symbol"

# Boundaries inside a letter run: lowercase-to-uppercase, and the end of an
# uppercase run before an Upper+lower word (CLocalAssum -> C, Local, Assum).
_CAMEL = re.compile(r".+?(?:(?<=[a-z])(?=[A-Z])|(?<=[A-Z])(?=[A-Z][a-z])|$)")
# Character-class runs; the alternatives partition every possible character.
_CLASS_RUNS = re.compile(r"_|[A-Za-z]+|[0-9]+|[^A-Za-z0-9_]+")


class EmptyName(Exception):
    """Raised when asked to sub-tokenize an empty name."""


@dataclass(frozen=True)
class SubToken:
    text: str
    kind: str


@dataclass(frozen=True)
class SuffixLexicon:
    """Single letters that naming conventions append to a word (mulgA)."""

    letters: frozenset = field(default=frozenset({"A", "C", "g"}))
    enabled: bool = True

    def __post_init__(self):
        object.__setattr__(self, "letters", frozenset(self.letters))
        if self.enabled and not self.letters:
            raise ValueError("suffix peeling enabled with an empty lexicon")
        for letter in self.letters:
            if len(letter) != 1 or not letter.isalpha():
                raise ValueError(f"suffix lexicon entries must be single letters: {letter!r}")

    def to_dict(self) -> dict:
        return {"letters": sorted(self.letters), "enabled": self.enabled}

    @classmethod
    def from_dict(cls, data: dict) -> "SuffixLexicon":
        return cls(letters=frozenset(data["letters"]), enabled=data["enabled"])


DEFAULT_LEXICON = SuffixLexicon()


def subtokenize_name(name: str, lexicon: SuffixLexicon = DEFAULT_LEXICON) -> list[SubToken]:
    """Split a lemma name into sub-tokens, peeling lexicon suffix letters."""
    if not name:
        raise EmptyName("cannot sub-tokenize an empty name")
    return _split(name, lexicon if lexicon.enabled else None)


def subtokenize_statement_token(token: str) -> list[SubToken]:
    """Split a statement or tree token; suffix peeling never applies here."""
    return _split(token, None)


def detokenize(subtokens) -> str:
    """Concatenate sub-tokens (or plain strings) back into a name."""
    return "".join(s.text if isinstance(s, SubToken) else s for s in subtokens)


def _split(text: str, lexicon: SuffixLexicon | None) -> list[SubToken]:
    out: list[SubToken] = []
    for run in _CLASS_RUNS.findall(text):
        if run == "_":
            out.append(SubToken("_", UNDERSCORE))
        elif run[0].isdigit():
            out.append(SubToken(run, DIGIT_RUN))
        elif run[0].isascii() and run[0].isalpha():
            for index, word in enumerate(_CAMEL.findall(run)):
                _append_word(out, word, lexicon, at_run_start=index == 0)
        else:
            out.append(SubToken(run, SYMBOL))
    return out


def _append_word(
    out: list[SubToken], word: str, lexicon: SuffixLexicon | None, at_run_start: bool
) -> None:
    if lexicon is None:
        out.append(SubToken(word, WORD))
        return
    # Peel suffix letters right to left, one per step. Stop rather than
    # leave a head that is empty or a lone letter outside the lexicon:
    # mulg peels to mul + g, but mg stays whole.
    suffixes: list[str] = []
    while (
        len(word) >= 2
        and word[-1] in lexicon.letters
        and (len(word) > 2 or word[0] in lexicon.letters)
    ):
        suffixes.append(word[-1])
        word = word[:-1]
    # A lone lexicon letter split off by the camel-case rule (the A of
    # mulgA) is a suffix in its own right unless it opens the run.
    if not at_run_start and len(word) == 1 and word in lexicon.letters:
        out.append(SubToken(word, SUFFIX_LETTER))
    else:
        out.append(SubToken(word, WORD))
    out.extend(SubToken(s, SUFFIX_LETTER) for s in reversed(suffixes))
