"""Nearest-lemma retrieval baseline over TF-IDF sub-token vectors.

Each training lemma becomes a bag of the same sub-tokens the neural
model consumes (per enabled input stream). A query lemma is vectorized
the same way and the names of the most cosine-similar training lemmas
are suggested verbatim. This is the reference point the learned model
has to beat: it can only replay names it has seen.
"""

from __future__ import annotations

import math
from collections import Counter

import numpy as np

from .chop import ChopConfig
from .corpus import stream_subtoken_texts
from .model import (
    CORPUS_STREAM_OF,
    STREAM_KERNEL,
    STREAM_STATEMENT,
    EmptyInput,
    EmptyTrainingSet,
    Suggestion,
)
from .subtok import DEFAULT_LEXICON, subtokenize_name

DEFAULT_INPUTS = (STREAM_STATEMENT, STREAM_KERNEL)


class RetrievalBaseline:
    """TF-IDF + cosine retrieval with corpus-order tie breaking."""

    def __init__(
        self,
        records,
        inputs=DEFAULT_INPUTS,
        chop_config: ChopConfig | None = None,
        lexicon=DEFAULT_LEXICON,
    ):
        records = list(records)
        if not records:
            raise EmptyTrainingSet("retrieval baseline needs at least one record")
        for stream in inputs:
            if stream not in CORPUS_STREAM_OF:
                raise ValueError(f"unknown input stream: {stream!r}")
        self.inputs = tuple(inputs)
        self.chop_config = chop_config or ChopConfig()
        self.lexicon = lexicon
        self._names = [record.name for record in records]

        bags = [self._bag(record) for record in records]
        document_frequency = Counter()
        for bag in bags:
            document_frequency.update(set(bag))
        self._index = {text: i for i, text in enumerate(sorted(document_frequency))}
        n_docs = len(records)
        self._idf = np.zeros(len(self._index))
        for text, column in self._index.items():
            self._idf[column] = math.log((1 + n_docs) / (1 + document_frequency[text])) + 1.0
        self._matrix = np.zeros((n_docs, len(self._index)))
        for row, bag in enumerate(bags):
            self._matrix[row] = self._vector(bag)

    def _bag(self, record) -> Counter:
        bag = Counter()
        for stream in self.inputs:
            texts = stream_subtoken_texts(
                record, CORPUS_STREAM_OF[stream], self.chop_config, self.lexicon
            )
            if not texts:
                raise EmptyInput(stream)
            bag.update(texts)
        return bag

    def _vector(self, bag: Counter) -> np.ndarray:
        vector = np.zeros(len(self._index))
        for text, count in bag.items():
            column = self._index.get(text)
            if column is not None:
                vector[column] = count * self._idf[column]
        norm = np.linalg.norm(vector)
        return vector / norm if norm > 0.0 else vector

    def similarities(self, record) -> np.ndarray:
        """Cosine similarity of the query against every training lemma."""
        return self._matrix @ self._vector(self._bag(record))

    def suggest(self, record, k: int = 5) -> list:
        """Names of the top-k most similar training lemmas, deduplicated.

        Equal similarities keep training corpus order; scores are cosine
        similarities in [0, 1].
        """
        if k < 1:
            raise ValueError("k must be positive")
        sims = self.similarities(record)
        suggestions = []
        seen = set()
        for row in np.argsort(-sims, kind="stable"):
            name = self._names[row]
            if name in seen:
                continue
            seen.add(name)
            sub_tokens = tuple(t.text for t in subtokenize_name(name, self.lexicon))
            suggestions.append(Suggestion(name=name, score=float(sims[row]), sub_tokens=sub_tokens))
            if len(suggestions) == k:
                break
        return suggestions
