"""Command-line surface: suggestion reports, training, evaluation, corpora.

Commands: suggest_naming (conformance report for one lemma-dataset
file), train (fit a model on a dataset directory), evaluate (score a
model or the retrieval baseline on the test split), gen_corpus (emit a
synthetic dataset), and serve (the stdio diagnostic server). Settings
come from a `.roosterizerc` file at the project root; command-line flags
override file values. Exit codes: 0 success/all conforming, 1 at least
one non-conforming lemma, 2 any error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .baseline import RetrievalBaseline
from .chop import ChopConfig
from .corpus import (
    FormatError,
    TooFewDocuments,
    load_directory,
    load_document,
    ordered_records,
    split_corpus,
    generate_synthetic_corpus,
)
from .metrics import EmptyTestSet, evaluate
from .model import (
    CorruptCheckpoint,
    DEFAULT_INPUT_CONFIG,
    EmptyInput,
    EmptyTrainingSet,
    INPUT_CONFIGS,
    ModelConfig,
    TrainingConfig,
    VersionMismatch,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .subtok import SuffixLexicon

CONFIG_FILE_NAME = ".roosterizerc"


class ConfigSyntaxError(Exception):
    def __init__(self, line: int, reason: str):
        super().__init__(f"{CONFIG_FILE_NAME}:{line}: {reason}")
        self.line = line


class MissingModel(Exception):
    pass


class IoError(Exception):
    pass


@dataclass
class ToolConfig:
    model_path: str | None = None
    data_dir: str | None = None
    k: int = 5
    compile_cmd: str | None = None  # parsed for compatibility, never executed
    chop: ChopConfig = field(default_factory=ChopConfig)
    lexicon: SuffixLexicon = field(default_factory=SuffixLexicon)


def _parse_bool(value: str, line: int, key: str) -> bool:
    lowered = value.lower()
    if lowered not in ("true", "false"):
        raise ConfigSyntaxError(line, f"{key} must be true or false, got {value!r}")
    return lowered == "true"


def _parse_list(value: str) -> tuple:
    return tuple(part.strip() for part in value.split(",") if part.strip())


_CONFIG_KEYS = (
    "model_path",
    "data_dir",
    "k",
    "compile_cmd",
    "qualid_collapse",
    "location_strip",
    "singleton_extract",
    "qualified_name_tags",
    "location_tags",
    "suffix_peeling",
    "suffix_letters",
)


def load_config(project_root) -> ToolConfig:
    """Parse `.roosterizerc` (`key: value`, full-line `#` comments).

    A missing file yields all defaults; unknown keys and malformed
    values are rejected with the offending line number.
    """
    path = Path(project_root) / CONFIG_FILE_NAME
    values: dict = {}
    if path.exists():
        for number, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, separator, value = line.partition(":")
            key = key.strip()
            value = value.strip()
            if not separator or not key:
                raise ConfigSyntaxError(number, f"expected 'key: value', got {raw!r}")
            if key not in _CONFIG_KEYS:
                raise ConfigSyntaxError(number, f"unknown key {key!r}")
            values[key] = (number, value)

    config = ToolConfig()
    if "model_path" in values:
        config.model_path = values["model_path"][1]
    if "data_dir" in values:
        config.data_dir = values["data_dir"][1]
    if "compile_cmd" in values:
        config.compile_cmd = values["compile_cmd"][1]
    if "k" in values:
        number, value = values["k"]
        try:
            config.k = int(value)
        except ValueError:
            raise ConfigSyntaxError(number, f"k must be an integer, got {value!r}") from None
        if config.k < 1:
            raise ConfigSyntaxError(number, "k must be at least 1")

    chop_kwargs: dict = {}
    chop_lines = []
    for key, name in (
        ("qualid_collapse", "enable_qualid_collapse"),
        ("location_strip", "enable_location_strip"),
        ("singleton_extract", "enable_singleton_extract"),
    ):
        if key in values:
            number, value = values[key]
            chop_kwargs[name] = _parse_bool(value, number, key)
            chop_lines.append(number)
    for key in ("qualified_name_tags", "location_tags"):
        if key in values:
            number, value = values[key]
            chop_kwargs[key] = frozenset(_parse_list(value))
            chop_lines.append(number)
    if chop_kwargs:
        try:
            config.chop = ChopConfig(**chop_kwargs)
        except ValueError as err:
            raise ConfigSyntaxError(min(chop_lines), str(err)) from None

    lexicon_kwargs: dict = {}
    if "suffix_peeling" in values:
        number, value = values["suffix_peeling"]
        lexicon_kwargs["enabled"] = _parse_bool(value, number, "suffix_peeling")
    if "suffix_letters" in values:
        lexicon_kwargs["letters"] = frozenset(_parse_list(values["suffix_letters"][1]))
    if lexicon_kwargs:
        number = values.get("suffix_letters", values.get("suffix_peeling"))[0]
        try:
            config.lexicon = SuffixLexicon(**lexicon_kwargs)
        except ValueError as err:
            raise ConfigSyntaxError(number, str(err)) from None
    return config


# ----------------------------------------------------------- suggestion report


@dataclass(frozen=True)
class SuggestionRow:
    file: str
    line: int
    name: str
    conforming: bool
    suggestions: tuple


@dataclass(frozen=True)
class SuggestionReport:
    """Per-lemma conformance verdicts for one lemma-dataset file."""

    source: str
    rows: tuple

    @property
    def nonconforming(self) -> tuple:
        return tuple(row for row in self.rows if not row.conforming)

    def to_text(self) -> str:
        lines = [f"suggest_naming report for {self.source}"]
        bad = self.nonconforming
        if not bad:
            lines.append(f"all {len(self.rows)} lemma names conform")
            return "\n".join(lines) + "\n"
        lines.append(f"{len(bad)} of {len(self.rows)} lemma names do not conform")
        lines.append("")
        for row in bad:
            lines.append(f"{row.file}:{row.line}  {row.name}")
            for rank, suggestion in enumerate(row.suggestions, start=1):
                lines.append(f"    {rank}. {suggestion.name}  {suggestion.score:.4f}")
        lines.append("")
        lines.append(f"conforming lemmas: {len(self.rows) - len(bad)}")
        return "\n".join(lines) + "\n"

    def to_jsonl(self) -> str:
        lines = []
        for row in self.rows:
            lines.append(
                json.dumps(
                    {
                        "file": row.file,
                        "line": row.line,
                        "name": row.name,
                        "conforming": row.conforming,
                        "suggestions": [
                            {"name": s.name, "score": s.score} for s in row.suggestions
                        ],
                    },
                    sort_keys=True,
                    separators=(",", ":"),
                )
            )
        return "\n".join(lines) + ("\n" if lines else "")


def build_suggestion_report(model, file_path, k: int) -> SuggestionReport:
    """Suggest names for every lemma in a file; rows keep document order."""
    records = load_document(file_path)
    rows = []
    for record in records:
        suggestions = tuple(model.suggest(record, k=k))
        rows.append(
            SuggestionRow(
                file=record.source.file,
                line=record.source.line,
                name=record.name,
                conforming=record.name in {s.name for s in suggestions},
                suggestions=suggestions,
            )
        )
    return SuggestionReport(source=str(file_path), rows=tuple(rows))


# -------------------------------------------------------------------- commands


def _load_model(path):
    if path is None:
        raise MissingModel(
            "no model checkpoint configured; pass --model or set model_path in .roosterizerc"
        )
    if not Path(path).is_file():
        raise MissingModel(f"model checkpoint not found: {path}")
    return load_checkpoint(path).to_model()


def cmd_suggest_naming(args) -> int:
    config = load_config(args.project)
    model_path = args.model if args.model is not None else config.model_path
    k = args.k if args.k is not None else config.k
    if not Path(args.file).is_file():
        raise IoError(f"no such lemma-dataset file: {args.file}")
    model = _load_model(model_path)
    report = build_suggestion_report(model, args.file, k)
    sys.stdout.write(report.to_text())
    if args.report:
        Path(args.report).write_text(report.to_jsonl(), encoding="utf-8")
    return 0 if not report.nonconforming else 1


def cmd_train(args) -> int:
    documents = load_directory(args.data)
    split = split_corpus(sorted(documents), seed=args.split_seed)
    config = ModelConfig(
        inputs=INPUT_CONFIGS[args.config_name],
        embed_dim=args.embed_dim,
        hidden_dim=args.hidden_dim,
        max_input_len=args.max_input_len,
        max_output_len=args.max_output_len,
    )
    training = TrainingConfig(
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        seed=args.seed,
        min_frequency=args.min_frequency,
        output_min_frequency=args.output_min_frequency,
    )
    checkpoint, metrics = train(documents, split, config, training)
    save_checkpoint(args.out, checkpoint)
    log_path = args.log if args.log else f"{args.out}.log"
    log_lines = [
        f"{m.epoch}\t{m.train_loss:.6f}\t{m.validation_top1:.4f}" for m in metrics
    ]
    Path(log_path).write_text("\n".join(log_lines) + ("\n" if log_lines else ""), encoding="utf-8")
    sys.stdout.write(f"wrote checkpoint to {args.out}\n")
    sys.stdout.write(f"wrote epoch metrics to {log_path}\n")
    return 0


def cmd_evaluate(args) -> int:
    config = load_config(args.project)
    documents = load_directory(args.data)
    split = split_corpus(sorted(documents), seed=args.split_seed)
    test_records = ordered_records(documents, split.test)
    if args.baseline:
        train_records = ordered_records(documents, split.train)
        suggester = RetrievalBaseline(
            train_records,
            inputs=INPUT_CONFIGS[args.config_name],
            chop_config=config.chop,
            lexicon=config.lexicon,
        )
    else:
        suggester = _load_model(args.model)
    report = evaluate(suggester, test_records, k=args.k)
    sys.stdout.write(report.to_text())
    if args.report:
        Path(args.report).write_text(report.to_jsonl(), encoding="utf-8")
    return 0


def cmd_gen_corpus(args) -> int:
    written = generate_synthetic_corpus(
        args.out, seed=args.seed, n_docs=args.docs, lemmas_per_doc=args.lemmas_per_doc
    )
    sys.stdout.write(f"wrote {len(written)} documents to {args.out}\n")
    return 0


def cmd_serve(args) -> int:
    from .diagserver import serve

    config = load_config(args.project)
    if args.model is not None:
        config.model_path = args.model
    if args.k is not None:
        config.k = args.k
    return serve(sys.stdin.buffer, sys.stdout.buffer, config)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {text}")
    return value


def _nonnegative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lemname",
        description="Learn lemma naming conventions and suggest names for Coq lemmas.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    suggest = commands.add_parser(
        "suggest_naming", help="report lemmas whose names do not conform"
    )
    suggest.add_argument("--file", required=True, help="lemma-dataset file to check")
    suggest.add_argument("--model", help="model checkpoint path (overrides config)")
    suggest.add_argument("-k", "--k", type=_positive_int, help="suggestions per lemma")
    suggest.add_argument("--project", default=".", help="directory holding .roosterizerc")
    suggest.add_argument("--report", help="write the structured JSONL report here")
    suggest.set_defaults(func=cmd_suggest_naming)

    fit = commands.add_parser("train", help="train a naming model on a dataset directory")
    fit.add_argument("--data", required=True, help="directory of *.lemmas.sexp documents")
    fit.add_argument(
        "--config-name",
        default=DEFAULT_INPUT_CONFIG,
        choices=sorted(INPUT_CONFIGS),
        help="input streams to encode",
    )
    fit.add_argument("--seed", type=_nonnegative_int, default=0, help="training seed")
    fit.add_argument("--epochs", type=_nonnegative_int, default=30)
    fit.add_argument("--out", default="model.ckpt", help="checkpoint output path")
    fit.add_argument("--log", help="epoch metrics log path (default: <out>.log)")
    fit.add_argument("--split-seed", type=_nonnegative_int, default=0)
    fit.add_argument("--batch-size", type=_positive_int, default=32)
    fit.add_argument("--learning-rate", type=float, default=1e-3)
    fit.add_argument("--embed-dim", type=_positive_int, default=64)
    fit.add_argument("--hidden-dim", type=_positive_int, default=128)
    fit.add_argument("--max-input-len", type=_positive_int, default=512)
    fit.add_argument("--max-output-len", type=_positive_int, default=16)
    fit.add_argument("--min-frequency", type=_positive_int, default=1)
    fit.add_argument("--output-min-frequency", type=_positive_int, default=None)
    fit.set_defaults(func=cmd_train)

    score = commands.add_parser("evaluate", help="score a model or the retrieval baseline")
    score.add_argument("--data", required=True, help="directory of *.lemmas.sexp documents")
    chooser = score.add_mutually_exclusive_group(required=True)
    chooser.add_argument("--model", help="model checkpoint to evaluate")
    chooser.add_argument("--baseline", action="store_true", help="evaluate TF-IDF retrieval")
    score.add_argument("-k", "--k", type=_positive_int, default=5)
    score.add_argument(
        "--config-name",
        default=DEFAULT_INPUT_CONFIG,
        choices=sorted(INPUT_CONFIGS),
        help="input streams for the baseline",
    )
    score.add_argument("--split-seed", type=_nonnegative_int, default=0)
    score.add_argument("--project", default=".", help="directory holding .roosterizerc")
    score.add_argument("--report", help="write the structured JSONL report here")
    score.set_defaults(func=cmd_evaluate)

    gen = commands.add_parser("gen_corpus", help="generate a synthetic lemma corpus")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--seed", type=_nonnegative_int, default=0)
    gen.add_argument("--docs", type=_positive_int, default=10)
    gen.add_argument("--lemmas-per-doc", type=_positive_int, default=10)
    gen.set_defaults(func=cmd_gen_corpus)

    server = commands.add_parser("serve", help="run the stdio diagnostic server")
    server.add_argument("--model", help="model checkpoint path (overrides config)")
    server.add_argument("-k", "--k", type=_positive_int, help="suggestions per lemma")
    server.add_argument("--project", default=".", help="directory holding .roosterizerc")
    server.set_defaults(func=cmd_serve)
    return parser


_DOMAIN_ERRORS = (
    ConfigSyntaxError,
    MissingModel,
    IoError,
    FormatError,
    TooFewDocuments,
    EmptyTrainingSet,
    EmptyTestSet,
    EmptyInput,
    VersionMismatch,
    CorruptCheckpoint,
    ValueError,
    OSError,
)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        return args.func(args)
    except _DOMAIN_ERRORS as err:
        sys.stderr.write(f"error: {err}\n")
        return 2


def console_main() -> None:
    sys.exit(main())
