"""Loading, splitting, and generating serialized lemma datasets.

A dataset is a directory of ``*.lemmas.sexp`` documents. Each document
holds one S-expression per lemma::

    (lemma (name <atom>) (path (<atoms>)) (line <int>)
           (stmt (<atoms...>)) (cst <sexp>) (ckt <sexp>))

Fields appear in exactly that order. Records that fail structural checks
are skipped with a warning; problems with the file itself raise
FormatError.
"""

from __future__ import annotations

import logging
import random
import re
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .chop import ChopConfig, chop
from .sexp import SExp, SExpError, linearize, parse, render
from .subtok import (
    DEFAULT_LEXICON,
    SuffixLexicon,
    subtokenize_name,
    subtokenize_statement_token,
)

log = logging.getLogger(__name__)

DOCUMENT_SUFFIX = ".lemmas.sexp"

PAD_ID = 0
UNK_ID = 1
BOS_ID = 2
EOS_ID = 3
RESERVED_TOKENS = ("<pad>", "<unk>", "<bos>", "<eos>")

_IDENTIFIER = re.compile(r"[A-Za-z_][A-Za-z0-9_']*\Z")
_FIELD_LABELS = ("name", "path", "line", "stmt", "cst", "ckt")


class FormatError(Exception):
    """A document that cannot be read as a lemma dataset at all."""

    def __init__(self, reason: str, position: int = 0):
        super().__init__(f"{reason} (position {position})")
        self.reason = reason
        self.position = position


class TooFewDocuments(Exception):
    """Splitting needs at least one document per part."""


@dataclass(frozen=True)
class SourceLocation:
    file: str
    line: int


@dataclass(frozen=True)
class LemmaRecord:
    """One lemma: its name, where it lives, and three representations."""

    name: str
    module_path: tuple
    statement_tokens: tuple
    syntax_tree: SExp
    kernel_tree: SExp
    source: SourceLocation


class _RecordDefect(Exception):
    pass


def _field(form: tuple, index: int, label: str) -> tuple:
    entry = form[index + 1]
    if not (isinstance(entry, tuple) and len(entry) == 2 and entry[0] == label):
        raise _RecordDefect(f"field {index} must be ({label} ...)")
    return entry


def _record_from_form(form: SExp, file_name: str) -> LemmaRecord:
    if not (isinstance(form, tuple) and form and form[0] == "lemma"):
        raise _RecordDefect("not a (lemma ...) form")
    if len(form) != len(_FIELD_LABELS) + 1:
        raise _RecordDefect(f"expected {len(_FIELD_LABELS)} fields, found {len(form) - 1}")

    name_field = _field(form, 0, "name")
    if not isinstance(name_field[1], str) or not _IDENTIFIER.match(name_field[1]):
        raise _RecordDefect(f"name is not a valid identifier: {name_field[1]!r}")
    name = name_field[1]

    path_field = _field(form, 1, "path")
    segments = path_field[1]
    if not isinstance(segments, tuple) or not all(isinstance(s, str) for s in segments):
        raise _RecordDefect("path must be a list of atoms")

    line_field = _field(form, 2, "line")
    if not isinstance(line_field[1], str) or not line_field[1].isdigit():
        raise _RecordDefect(f"line must be a positive integer: {line_field[1]!r}")
    line = int(line_field[1])
    if line <= 0:
        raise _RecordDefect("line must be positive")

    stmt_field = _field(form, 3, "stmt")
    tokens = stmt_field[1]
    if not isinstance(tokens, tuple) or not tokens or not all(isinstance(t, str) and t for t in tokens):
        raise _RecordDefect("stmt must be a non-empty list of non-empty atoms")

    cst_field = _field(form, 4, "cst")
    ckt_field = _field(form, 5, "ckt")

    return LemmaRecord(
        name=name,
        module_path=segments,
        statement_tokens=tokens,
        syntax_tree=cst_field[1],
        kernel_tree=ckt_field[1],
        source=SourceLocation(file=file_name, line=line),
    )


def load_document(path) -> list:
    """Read one document, skipping (and logging) defective records."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        forms = parse(text)
    except SExpError as err:
        raise FormatError(f"unreadable document {path.name}: {err}", err.position) from err
    records = []
    for index, form in enumerate(forms):
        if not (isinstance(form, tuple) and form and form[0] == "lemma"):
            raise FormatError(f"top-level form {index} in {path.name} is not a (lemma ...) record", index)
        try:
            records.append(_record_from_form(form, path.name))
        except _RecordDefect as defect:
            log.warning("skipping record %d in %s: %s", index, path.name, defect)
    return records


def load_directory(data_dir) -> dict:
    """Load every document in a directory, keyed by file name."""
    data_dir = Path(data_dir)
    documents = {}
    for path in sorted(data_dir.glob(f"*{DOCUMENT_SUFFIX}")):
        documents[path.name] = load_document(path)
    return documents


@dataclass(frozen=True)
class DatasetSplit:
    """Document-level train/validation/test partition."""

    train: frozenset
    validation: frozenset
    test: frozenset
    ratios: tuple = (0.8, 0.1, 0.1)
    seed: int = 0


def split_corpus(doc_ids, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> DatasetSplit:
    """Partition documents by shuffled assignment with floor arithmetic.

    Train and validation get floor(ratio * n) documents each; the
    remainder goes to test, so no document is dropped.
    """
    docs = sorted(doc_ids)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive numbers summing to 1: {ratios}")
    if len(docs) < 3:
        raise TooFewDocuments(f"need at least 3 documents to split, have {len(docs)}")
    rng = random.Random(seed)
    rng.shuffle(docs)
    n_train = int(len(docs) * ratios[0])
    n_val = int(len(docs) * ratios[1])
    return DatasetSplit(
        train=frozenset(docs[:n_train]),
        validation=frozenset(docs[n_train : n_train + n_val]),
        test=frozenset(docs[n_train + n_val :]),
        ratios=tuple(ratios),
        seed=seed,
    )


def ordered_records(documents: dict, doc_ids) -> list:
    """Records of the given documents, in sorted-document then file order."""
    out = []
    for doc_id in sorted(doc_ids):
        out.extend(documents[doc_id])
    return out


STREAM_NAMES = ("statement", "syntax_tree", "kernel_tree", "name")


def stream_subtoken_texts(
    record: LemmaRecord,
    stream: str,
    chop_config: ChopConfig | None = None,
    lexicon: SuffixLexicon = DEFAULT_LEXICON,
) -> list:
    """The canonical sub-token text sequence of one stream of a record.

    Tree streams are chopped and linearized first; the name stream uses
    suffix peeling. This is the single preprocessing path shared by
    vocabulary building, training, and inference.
    """
    if stream == "statement":
        tokens = record.statement_tokens
    elif stream == "syntax_tree":
        tokens = linearize(chop(record.syntax_tree, chop_config or ChopConfig()))
    elif stream == "kernel_tree":
        tokens = linearize(chop(record.kernel_tree, chop_config or ChopConfig()))
    elif stream == "name":
        return [s.text for s in subtokenize_name(record.name, lexicon)]
    else:
        raise ValueError(f"unknown stream: {stream!r}")
    return [s.text for token in tokens for s in subtokenize_statement_token(token)]


class Vocabulary:
    """Sub-token texts mapped to dense ids, reserved entries first.

    Ids 0..3 are <pad>, <unk>, <bos>, <eos>. Corpus entries follow in
    descending frequency, ties broken lexicographically, so a vocabulary
    is a pure function of its training corpus.
    """

    def __init__(self, tokens, min_frequency: int = 1):
        self.min_frequency = min_frequency
        self._texts = RESERVED_TOKENS + tuple(tokens)
        self._ids = {}
        for index, text in enumerate(self._texts):
            if text in self._ids:
                raise ValueError(f"duplicate vocabulary entry: {text!r}")
            self._ids[text] = index

    def encode(self, text: str) -> int:
        return self._ids.get(text, UNK_ID)

    def decode(self, token_id: int) -> str:
        return self._texts[token_id]

    def __contains__(self, text: str) -> bool:
        return text in self._ids

    def __len__(self) -> int:
        return len(self._texts)

    @property
    def texts(self) -> tuple:
        return self._texts

    def to_dict(self) -> dict:
        return {"tokens": list(self._texts[len(RESERVED_TOKENS) :]), "min_frequency": self.min_frequency}

    @classmethod
    def from_dict(cls, data: dict) -> "Vocabulary":
        return cls(data["tokens"], data["min_frequency"])

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._texts == other._texts

    def __hash__(self):
        return hash(self._texts)


def build_vocabulary(
    records,
    stream: str,
    min_frequency: int = 1,
    chop_config: ChopConfig | None = None,
    lexicon: SuffixLexicon = DEFAULT_LEXICON,
) -> Vocabulary:
    """Count sub-tokens of one stream and keep those meeting min_frequency."""
    counts = Counter()
    for record in records:
        counts.update(stream_subtoken_texts(record, stream, chop_config, lexicon))
    kept = [
        text
        for text, count in counts.items()
        if count >= min_frequency and text not in RESERVED_TOKENS
    ]
    kept.sort(key=lambda text: (-counts[text], text))
    return Vocabulary(kept, min_frequency)


# --- synthetic corpus -------------------------------------------------------

DEFAULT_OPERATIONS = (
    "add", "mul", "sub", "opp", "inv", "rev", "cat", "map",
    "size", "perm", "join", "meet", "filt", "dual", "pair", "comp",
)

# Suffix combinations paired with the statement features that signal them:
# g selects the carrier G over T, A the associativity shape, C the
# commutativity shape, no letter the idempotence shape.
_SUFFIX_COMBOS = ((), ("g",), ("A",), ("C",), ("g", "A"), ("g", "C"))


def _draw_lemma(rng: random.Random, operations):
    if rng.random() < 0.5:
        qualifier, operation = rng.sample(list(operations), 2)
    else:
        qualifier, operation = None, rng.choice(list(operations))
    suffixes = _SUFFIX_COMBOS[rng.randrange(len(_SUFFIX_COMBOS))]
    head = operation + "".join(suffixes)
    name = f"{qualifier}_{head}" if qualifier else head
    return qualifier, operation, suffixes, name


def _statement_tokens(qualifier, operation, suffixes):
    carrier = "G" if "g" in suffixes else "T"
    type_tokens = ([qualifier] if qualifier else []) + [carrier]
    if "A" in suffixes:
        variables = ["x", "y", "z"]
        lhs = [operation, "(", operation, "x", "y", ")", "z"]
        rhs = [operation, "x", "(", operation, "y", "z", ")"]
    elif "C" in suffixes:
        variables = ["x", "y"]
        lhs = [operation, "x", "y"]
        rhs = [operation, "y", "x"]
    else:
        variables = ["x"]
        lhs = [operation, "(", operation, "x", ")"]
        rhs = [operation, "x"]
    return ["forall"] + variables + [":"] + type_tokens + [","] + lhs + ["="] + rhs, variables


def _expression(operation, suffixes):
    def app(*args):
        return ("app",) + args

    if "A" in suffixes:
        lhs = app(operation, app(operation, "x", "y"), "z")
        rhs = app(operation, "x", app(operation, "y", "z"))
    elif "C" in suffixes:
        lhs = app(operation, "x", "y")
        rhs = app(operation, "y", "x")
    else:
        lhs = app(operation, app(operation, "x"))
        rhs = app(operation, "x")
    return lhs, rhs


def _qualified(tag: str, name: str) -> tuple:
    return (tag, ("DirPath", ()), ("Id", name))


def _cst_expr(expr) -> tuple:
    if isinstance(expr, str):
        return ("CRef", ("Id", expr))
    head = expr[1]
    args = expr[2:]
    return ("CApp", _qualified("Ser_Qualid", head)) + tuple(_cst_expr(a) for a in args)


def _ckt_expr(expr, var_index) -> tuple:
    if isinstance(expr, str):
        return ("Rel", str(var_index[expr]))
    head = expr[1]
    args = expr[2:]
    return ("App", ("Const", _qualified("Qualid", head))) + tuple(
        _ckt_expr(a, var_index) for a in args
    )


def _carrier_type(tag: str, qualifier, carrier: str) -> tuple:
    base = ("Ind", _qualified(tag, carrier))
    if qualifier:
        return ("App", ("Const", _qualified(tag, qualifier)), base)
    return base


def _syntax_tree(file_name, line, qualifier, operation, suffixes, variables):
    carrier = "G" if "g" in suffixes else "T"
    lhs, rhs = _expression(operation, suffixes)
    binders = tuple(("CLocalAssum", ("Id", v)) for v in variables)
    return (
        "Sentence",
        ("loc", (("fname", file_name), ("line", str(line)))),
        (
            "CProd",
            ("binders", binders),
            ("ty", _carrier_type("Ser_Qualid", qualifier, carrier)),
            ("CNotation", "=", _cst_expr(lhs), _cst_expr(rhs)),
        ),
    )


def _kernel_tree(qualifier, operation, suffixes, variables):
    carrier = "G" if "g" in suffixes else "T"
    lhs, rhs = _expression(operation, suffixes)
    # De Bruijn style: innermost binder is 1.
    var_index = {v: len(variables) - i for i, v in enumerate(variables)}
    body = (
        "App",
        ("Const", _qualified("Qualid", "eq")),
        _ckt_expr(lhs, var_index),
        _ckt_expr(rhs, var_index),
    )
    tree = body
    for variable in reversed(variables):
        tree = (
            "Prod",
            ("Name", ("Id", variable)),
            _carrier_type("Qualid", qualifier, carrier),
            tree,
        )
    return tree


def generate_synthetic_corpus(
    out_dir,
    seed: int = 0,
    n_docs: int = 10,
    lemmas_per_doc: int = 10,
    operations=DEFAULT_OPERATIONS,
    exclude_names=frozenset(),
) -> list:
    """Write a deterministic synthetic corpus and return the file paths.

    Lemma names compose an optional qualifier word, an operation word,
    and conventional suffix letters; statements and both trees encode
    exactly the features the name mentions, so the naming convention is
    learnable from any single representation. Same seed, same bytes.
    """
    if n_docs <= 0 or lemmas_per_doc <= 0:
        raise ValueError("corpus dimensions must be positive")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    exclude = frozenset(exclude_names)
    paths = []
    for doc in range(n_docs):
        stem = f"doc_{doc:03d}"
        file_name = stem + DOCUMENT_SUFFIX
        forms = []
        for index in range(lemmas_per_doc):
            for _ in range(200):
                qualifier, operation, suffixes, name = _draw_lemma(rng, operations)
                if name not in exclude:
                    break
            else:
                raise RuntimeError("exhausted attempts to draw a name outside exclude_names")
            line = 2 + 5 * index
            tokens, variables = _statement_tokens(qualifier, operation, suffixes)
            form = (
                "lemma",
                ("name", name),
                ("path", ("synth", stem)),
                ("line", str(line)),
                ("stmt", tuple(tokens)),
                ("cst", _syntax_tree(stem + ".v", line, qualifier, operation, suffixes, variables)),
                ("ckt", _kernel_tree(qualifier, operation, suffixes, variables)),
            )
            forms.append(render(form))
        path = out_dir / file_name
        path.write_text("\n".join(forms) + "\n", encoding="utf-8")
        paths.append(path)
    return paths


def bundled_corpus_dir() -> Path:
    """Directory of the small corpus shipped inside the package."""
    return Path(str(resources.files("lemname") / "data" / "bundled"))
