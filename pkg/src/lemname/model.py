"""Multi-input encoder-decoder that learns lemma naming conventions.

Each enabled input stream (statement tokens, chopped syntax tree, chopped
kernel tree) runs through its own bidirectional GRU encoder; the final
states are fused by one affine+tanh layer into the decoder's initial
state. The GRU decoder emits name sub-tokens with multiplicative
attention over every encoder position and a pointer-generator gate that
mixes generating from the output vocabulary with copying source
sub-tokens, so rare identifiers can be produced verbatim.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .chop import ChopConfig
from .corpus import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    Vocabulary,
    build_vocabulary,
    ordered_records,
    stream_subtoken_texts,
)
from .subtok import DEFAULT_LEXICON, SuffixLexicon
from .nn import (
    AdamState,
    GruParams,
    Parameters,
    Rng,
    ShapeMismatch,
    Tensor,
    adam_step,
    backward,
    bmm,
    concat,
    div,
    embedding_init,
    embedding_lookup,
    exp,
    gather_index,
    gru_cell,
    gru_params,
    linear_init,
    log,
    matmul,
    neg,
    reshape,
    sigmoid,
    softmax,
    sum_,
    tanh,
    transpose,
)

STREAM_STATEMENT = "statement"
STREAM_SYNTAX = "chopped_syntax_tree"
STREAM_KERNEL = "chopped_kernel_tree"
ALL_STREAMS = (STREAM_STATEMENT, STREAM_SYNTAX, STREAM_KERNEL)

# Model stream name -> corpus stream name (chopping happens in corpus).
CORPUS_STREAM_OF = {
    STREAM_STATEMENT: "statement",
    STREAM_SYNTAX: "syntax_tree",
    STREAM_KERNEL: "kernel_tree",
}

# The input combinations exposed by the command line.
INPUT_CONFIGS = {
    "stmt": (STREAM_STATEMENT,),
    "stmt+cst": (STREAM_STATEMENT, STREAM_SYNTAX),
    "stmt+ckt": (STREAM_STATEMENT, STREAM_KERNEL),
    "cst+ckt": (STREAM_SYNTAX, STREAM_KERNEL),
    "stmt+cst+ckt": (STREAM_STATEMENT, STREAM_SYNTAX, STREAM_KERNEL),
}
DEFAULT_INPUT_CONFIG = "stmt+ckt"

CHECKPOINT_MAGIC = b"LNCK"
CHECKPOINT_VERSION = 1

_LOG_FLOOR = 1e-12  # keeps -log finite when a target is neither generable nor copyable


class EmptyInput(Exception):
    """A record produced zero sub-tokens for an enabled stream."""

    def __init__(self, stream: str):
        super().__init__(f"record has no sub-tokens for stream {stream!r}")
        self.stream = stream


class EmptyTrainingSet(Exception):
    pass


class VersionMismatch(Exception):
    def __init__(self, found: int, supported: int):
        super().__init__(f"checkpoint format version {found}, supported {supported}")
        self.found = found
        self.supported = supported


class CorruptCheckpoint(Exception):
    pass


@dataclass(frozen=True)
class ModelConfig:
    inputs: tuple = (STREAM_STATEMENT, STREAM_KERNEL)
    embed_dim: int = 64
    hidden_dim: int = 128
    bidirectional: bool = True
    use_attention: bool = True
    use_copy: bool = True
    max_input_len: int = 512
    max_output_len: int = 16
    beam_width: int = 5

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        if not self.inputs:
            raise ValueError("at least one input stream is required")
        if len(set(self.inputs)) != len(self.inputs):
            raise ValueError(f"duplicate input streams: {self.inputs}")
        for stream in self.inputs:
            if stream not in ALL_STREAMS:
                raise ValueError(f"unknown input stream: {stream!r}")
        for name in ("embed_dim", "hidden_dim", "max_input_len", "max_output_len", "beam_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.bidirectional and self.hidden_dim % 2:
            raise ValueError("bidirectional encoders need an even hidden_dim")
        if self.use_copy and not self.use_attention:
            raise ValueError("the copy mechanism requires attention")

    def to_dict(self) -> dict:
        return {
            "inputs": list(self.inputs),
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "bidirectional": self.bidirectional,
            "use_attention": self.use_attention,
            "use_copy": self.use_copy,
            "max_input_len": self.max_input_len,
            "max_output_len": self.max_output_len,
            "beam_width": self.beam_width,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**{**data, "inputs": tuple(data["inputs"])})


@dataclass
class TrainingConfig:
    epochs: int
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 32
    seed: int = 0
    min_frequency: int = 1
    output_min_frequency: int | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass(frozen=True)
class Suggestion:
    """One ranked name: score is length-normalized log-probability."""

    name: str
    score: float
    sub_tokens: tuple


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    train_loss: float
    validation_top1: float


@dataclass
class EncodedSource:
    """Everything the decoder needs about one record's inputs."""

    stream_ids: dict  # stream -> (T,) int ids
    stream_hidden: dict  # stream -> (1, T, H) Tensor
    final_states: dict  # stream -> (1, H) Tensor
    hidden: Tensor  # (1, S, H) concatenation over streams
    mask: np.ndarray  # (1, S)
    source_texts: tuple  # length S, concatenated sub-token texts
    oov_texts: tuple  # source texts absent from the output vocabulary
    source_ext_ids: np.ndarray  # (S,) extended-vocabulary id per position


@dataclass
class DecodedDistribution:
    """Probabilities over the output vocabulary extended with copyable texts."""

    probabilities: np.ndarray
    texts: tuple


@dataclass
class _Batch:
    hidden: Tensor
    mask: np.ndarray
    finals: list
    texts: list  # per example: list of length S with None at padding
    stream_ids: dict
    stream_hidden: dict


class LemmaNameModel:
    """Encoder-decoder over a fixed set of vocabularies and parameters."""

    def __init__(
        self,
        config: ModelConfig,
        chop_config: ChopConfig,
        lexicon,
        vocabularies: dict,
        seed: int = 0,
        parameter_state: dict | None = None,
    ):
        missing = [s for s in (*config.inputs, "output") if s not in vocabularies]
        if missing:
            raise ValueError(f"vocabularies missing entries: {missing}")
        self.config = config
        self.chop_config = chop_config
        self.lexicon = lexicon
        self.vocabularies = vocabularies
        self.parameters = Parameters()
        self._encoders: dict = {}
        self._build_parameters(Rng(seed))
        if parameter_state is not None:
            self.parameters.load_state(parameter_state)

    # ------------------------------------------------------------------ setup

    def _build_parameters(self, rng: Rng) -> None:
        cfg = self.config
        hidden = cfg.hidden_dim
        direction_dim = hidden // 2 if cfg.bidirectional else hidden
        for stream in cfg.inputs:
            vocab = self.vocabularies[stream]
            self.parameters.add(f"enc.{stream}.embed", embedding_init(rng, len(vocab), cfg.embed_dim))
            cells = {"fwd": gru_params(self.parameters, f"enc.{stream}.fwd", rng, cfg.embed_dim, direction_dim)}
            if cfg.bidirectional:
                cells["bwd"] = gru_params(self.parameters, f"enc.{stream}.bwd", rng, cfg.embed_dim, direction_dim)
            self._encoders[stream] = cells
        self.parameters.add("comb.w", linear_init(rng, len(cfg.inputs) * hidden, hidden))
        self.parameters.add("comb.b", np.zeros(hidden))
        out_vocab = self.vocabularies["output"]
        self.parameters.add("dec.embed", embedding_init(rng, len(out_vocab), cfg.embed_dim))
        self._decoder_cell = gru_params(self.parameters, "dec.gru", rng, cfg.embed_dim, hidden)
        if cfg.use_attention:
            self.parameters.add("attn.w", linear_init(rng, hidden, hidden))
            self.parameters.add("out.w_c", linear_init(rng, 2 * hidden, hidden))
        else:
            self.parameters.add("out.w_c", linear_init(rng, hidden, hidden))
        self.parameters.add("out.w", linear_init(rng, hidden, len(out_vocab)))
        self.parameters.add("out.b", np.zeros(len(out_vocab)))
        if cfg.use_copy:
            self.parameters.add("copy.w", linear_init(rng, 2 * hidden + cfg.embed_dim, 1))
            self.parameters.add("copy.b", np.zeros(1))

    # ------------------------------------------------------------ preprocessing

    def stream_texts(self, record) -> dict:
        """Truncated sub-token texts for every enabled stream of a record."""
        out = {}
        for stream in self.config.inputs:
            texts = stream_subtoken_texts(
                record, CORPUS_STREAM_OF[stream], self.chop_config, self.lexicon
            )[: self.config.max_input_len]
            if not texts:
                raise EmptyInput(stream)
            out[stream] = texts
        return out

    def target_texts(self, record) -> list:
        return stream_subtoken_texts(record, "name", lexicon=self.lexicon)[
            : self.config.max_output_len
        ]

    # ------------------------------------------------------------------ encoder

    def _run_direction(self, emb: Tensor, masks: list, cell: GruParams, reverse: bool):
        batch, length = emb.shape[0], emb.shape[1]
        width = cell.w_h.shape[0]
        h = Tensor(np.zeros((batch, width)))
        outputs = [None] * length
        steps = range(length - 1, -1, -1) if reverse else range(length)
        for t in steps:
            stepped = gru_cell(emb[:, t, :], h, cell)
            h = masks[t] * stepped + (1.0 - masks[t]) * h
            outputs[t] = h
        return outputs, h

    def _encode_batch(self, records) -> _Batch:
        cfg = self.config
        per_record = [self.stream_texts(r) for r in records]
        batch = len(records)
        hidden_parts, mask_parts, finals = [], [], []
        texts: list = [[] for _ in records]
        stream_ids: dict = {}
        stream_hidden: dict = {}
        for stream in cfg.inputs:
            vocab = self.vocabularies[stream]
            seqs = [texts_of[stream] for texts_of in per_record]
            length = max(len(s) for s in seqs)
            ids = np.full((batch, length), PAD_ID, dtype=np.int64)
            mask = np.zeros((batch, length))
            for b, seq in enumerate(seqs):
                ids[b, : len(seq)] = [vocab.encode(t) for t in seq]
                mask[b, : len(seq)] = 1.0
                texts[b].extend(seq + [None] * (length - len(seq)))
            emb = embedding_lookup(self.parameters[f"enc.{stream}.embed"], ids)
            masks = [Tensor(mask[:, t : t + 1]) for t in range(length)]
            cells = self._encoders[stream]
            fwd_out, fwd_final = self._run_direction(emb, masks, cells["fwd"], reverse=False)
            if cfg.bidirectional:
                bwd_out, bwd_final = self._run_direction(emb, masks, cells["bwd"], reverse=True)
                positions = [concat([f, b_], axis=1) for f, b_ in zip(fwd_out, bwd_out)]
                final = concat([fwd_final, bwd_final], axis=1)
            else:
                positions, final = fwd_out, fwd_final
            stream_seq = concat(
                [reshape(p, (batch, 1, cfg.hidden_dim)) for p in positions], axis=1
            )
            hidden_parts.append(stream_seq)
            mask_parts.append(mask)
            finals.append(final)
            stream_ids[stream] = ids
            stream_hidden[stream] = stream_seq
        return _Batch(
            hidden=concat(hidden_parts, axis=1),
            mask=np.concatenate(mask_parts, axis=1),
            finals=finals,
            texts=texts,
            stream_ids=stream_ids,
            stream_hidden=stream_hidden,
        )

    def _initial_state(self, batch: _Batch) -> Tensor:
        fused = concat(batch.finals, axis=1)
        return tanh(matmul(fused, self.parameters["comb.w"]) + self.parameters["comb.b"])

    # ------------------------------------------------------------------ decoder

    def _step(self, state: Tensor, input_ids: np.ndarray, batch: _Batch):
        """One decoder step: returns (new_state, vocab dist, attention, p_gen)."""
        cfg = self.config
        params = self.parameters
        x = embedding_lookup(params["dec.embed"], input_ids)
        state = gru_cell(x, state, self._decoder_cell)
        attention = None
        p_gen = None
        if cfg.use_attention:
            n = state.shape[0]
            query = reshape(matmul(state, params["attn.w"]), (n, 1, cfg.hidden_dim))
            scores = reshape(bmm(query, transpose(batch.hidden, (0, 2, 1))), (n, -1))
            shift = Tensor(scores.data.max(axis=1, keepdims=True))
            weights = exp(scores - shift) * Tensor(batch.mask)
            attention = div(weights, sum_(weights, axis=1, keepdims=True))
            context = reshape(
                bmm(reshape(attention, (n, 1, -1)), batch.hidden), (n, cfg.hidden_dim)
            )
            features = tanh(matmul(concat([state, context], axis=1), params["out.w_c"]))
            if cfg.use_copy:
                gate_in = concat([context, state, x], axis=1)
                p_gen = sigmoid(matmul(gate_in, params["copy.w"]) + params["copy.b"])
        else:
            features = tanh(matmul(state, params["out.w_c"]))
        logits = matmul(features, params["out.w"]) + params["out.b"]
        return state, softmax(logits, axis=1), attention, p_gen

    # -------------------------------------------------------------------- loss

    def _target_arrays(self, records, batch: _Batch):
        out_vocab = self.vocabularies["output"]
        names = [self.target_texts(r) for r in records]
        n = len(records)
        steps = max(len(t) for t in names) + 1  # final step predicts EOS
        input_ids = np.full((n, steps), PAD_ID, dtype=np.int64)
        target_ids = np.full((n, steps), PAD_ID, dtype=np.int64)
        in_vocab = np.zeros((n, steps))
        step_mask = np.zeros((n, steps))
        source_len = len(batch.texts[0])
        match = np.zeros((n, steps, source_len)) if self.config.use_copy else None
        for b, texts in enumerate(names):
            input_ids[b, 0] = BOS_ID
            for t, text in enumerate(texts):
                encoded = out_vocab.encode(text)
                target_ids[b, t] = encoded
                in_vocab[b, t] = 1.0 if text in out_vocab else 0.0
                step_mask[b, t] = 1.0
                if t + 1 < steps:
                    input_ids[b, t + 1] = encoded
                if match is not None:
                    row = [i for i, src in enumerate(batch.texts[b]) if src == text]
                    match[b, t, row] = 1.0
            target_ids[b, len(texts)] = EOS_ID
            in_vocab[b, len(texts)] = 1.0
            step_mask[b, len(texts)] = 1.0
        return input_ids, target_ids, in_vocab, step_mask, match

    def _loss_batch(self, records):
        if not records:
            raise EmptyTrainingSet("loss of an empty batch")
        batch = self._encode_batch(records)
        state = self._initial_state(batch)
        input_ids, target_ids, in_vocab, step_mask, match = self._target_arrays(records, batch)
        steps = input_ids.shape[1]
        total = None
        for t in range(steps):
            state, vocab_dist, attention, p_gen = self._step(state, input_ids[:, t], batch)
            generated = gather_index(vocab_dist, target_ids[:, t])
            if self.config.use_copy:
                gate = reshape(p_gen, (len(records),))
                copied = sum_(attention * Tensor(match[:, t, :]), axis=1)
                prob = gate * (generated * Tensor(in_vocab[:, t])) + (1.0 - gate) * copied
            else:
                prob = generated
            step_loss = neg(log(prob + _LOG_FLOOR)) * Tensor(step_mask[:, t])
            total = step_loss if total is None else total + step_loss
        token_count = int(step_mask.sum())
        mean = sum_(total) * (1.0 / token_count)
        return mean, token_count

    def loss(self, records) -> Tensor:
        """Mean negative log-likelihood per target sub-token (incl. EOS)."""
        return self._loss_batch(records)[0]

    # ------------------------------------------------------------ public surface

    def encode(self, record) -> EncodedSource:
        """Run the encoders over one record."""
        batch = self._encode_batch([record])
        out_vocab = self.vocabularies["output"]
        source_texts = tuple(batch.texts[0])
        oov_texts: list = []
        ext_ids = np.zeros(len(source_texts), dtype=np.int64)
        for i, text in enumerate(source_texts):
            if text in out_vocab:
                ext_ids[i] = out_vocab.encode(text)
            else:
                if text not in oov_texts:
                    oov_texts.append(text)
                ext_ids[i] = len(out_vocab) + oov_texts.index(text)
        return EncodedSource(
            stream_ids={s: ids[0] for s, ids in batch.stream_ids.items()},
            stream_hidden=batch.stream_hidden,
            final_states=dict(zip(self.config.inputs, batch.finals)),
            hidden=batch.hidden,
            mask=batch.mask,
            source_texts=source_texts,
            oov_texts=tuple(oov_texts),
            source_ext_ids=ext_ids,
        )

    def combine(self, source: EncodedSource) -> Tensor:
        """Fuse per-stream final states into the decoder's initial state."""
        finals = [source.final_states[s] for s in self.config.inputs]
        fused = concat(finals, axis=1)
        return tanh(matmul(fused, self.parameters["comb.w"]) + self.parameters["comb.b"])

    def _source_as_batch(self, source: EncodedSource) -> _Batch:
        return _Batch(
            hidden=source.hidden,
            mask=source.mask,
            finals=[source.final_states[s] for s in self.config.inputs],
            texts=[list(source.source_texts)],
            stream_ids=source.stream_ids,
            stream_hidden=source.stream_hidden,
        )

    def _extended_probs(self, vocab_dist, attention, p_gen, source: EncodedSource) -> np.ndarray:
        base_size = len(self.vocabularies["output"])
        ext = np.zeros(base_size + len(source.oov_texts))
        if self.config.use_copy:
            gate = float(p_gen.data[0, 0])
            ext[:base_size] = gate * vocab_dist.data[0]
            np.add.at(ext, source.source_ext_ids, (1.0 - gate) * attention.data[0])
        else:
            ext[:base_size] = vocab_dist.data[0]
        return ext

    def decode_step(self, state: Tensor, prev_sub_token_id: int, source: EncodedSource):
        """One decoding step for a single record.

        Returns the new state and the probability distribution over the
        output vocabulary extended with the record's copyable sub-tokens.
        """
        batch = self._source_as_batch(source)
        input_ids = np.array([prev_sub_token_id], dtype=np.int64)
        state, vocab_dist, attention, p_gen = self._step(state, input_ids, batch)
        probs = self._extended_probs(vocab_dist, attention, p_gen, source)
        texts = self.vocabularies["output"].texts + source.oov_texts
        return state, DecodedDistribution(probabilities=probs, texts=texts)

    def suggest(self, record, k: int | None = None) -> list:
        """Top-k name suggestions by beam search with length normalization.

        Finished hypotheses occupy beam slots, so width 1 degenerates to
        exact greedy decoding. Scores are mean log-probability per emitted
        sub-token (end marker included); ties break lexicographically.
        """
        width = self.config.beam_width if k is None else k
        if width < 1:
            raise ValueError("k must be positive")
        out_vocab = self.vocabularies["output"]
        base_size = len(out_vocab)
        source = self.encode(record)
        state = self.combine(source)

        # Hypothesis: (token texts, summed logp, decoder state, next input id)
        alive = [((), 0.0, state, BOS_ID)]
        done: list = []
        for _ in range(self.config.max_output_len):
            budget = width - len(done)
            if budget <= 0 or not alive:
                break
            candidates = []
            for texts, score, h, prev_id in alive:
                new_h, dist = self.decode_step(h, prev_id, source)
                logp = np.log(dist.probabilities + _LOG_FLOOR)
                # +2 slack: the padding and start markers below are skipped
                order = np.argsort(-logp, kind="stable")[: budget + 2]
                for ext_id in order:
                    ext_id = int(ext_id)
                    if ext_id in (PAD_ID, BOS_ID):
                        continue
                    candidates.append(
                        (score + float(logp[ext_id]), texts, new_h, ext_id, dist.texts[ext_id])
                    )
            candidates.sort(key=lambda c: (-c[0], c[1] + (c[4],)))
            alive = []
            for score, texts, new_h, ext_id, text in candidates[:budget]:
                if ext_id == EOS_ID:
                    if texts:  # an immediately closed, empty name is useless
                        done.append((texts, score, len(texts) + 1))
                    continue
                next_input = out_vocab.encode(text) if ext_id >= base_size else ext_id
                alive.append((texts + (text,), score, new_h, next_input))
        done.extend((texts, score, len(texts)) for texts, score, _h, _p in alive if texts)

        ranked = sorted(
            ((score / steps, texts) for texts, score, steps in done),
            key=lambda pair: (-pair[0], pair[1]),
        )
        suggestions = []
        seen = set()
        for norm_score, texts in ranked:
            name = "".join(texts)
            if name in seen:
                continue
            seen.add(name)
            suggestions.append(Suggestion(name=name, score=norm_score, sub_tokens=texts))
            if len(suggestions) == width:
                break
        return suggestions

    def greedy_names(self, records) -> list:
        """Batched greedy decode; used for per-epoch validation accuracy."""
        if not records:
            return []
        out_vocab = self.vocabularies["output"]
        base_size = len(out_vocab)
        batch = self._encode_batch(records)
        state = self._initial_state(batch)
        n = len(records)
        finished = [False] * n
        emitted: list = [[] for _ in range(n)]
        input_ids = np.full(n, BOS_ID, dtype=np.int64)
        for _ in range(self.config.max_output_len):
            state, vocab_dist, attention, p_gen = self._step(state, input_ids, batch)
            for b in range(n):
                if finished[b]:
                    input_ids[b] = EOS_ID
                    continue
                if self.config.use_copy:
                    gate = float(p_gen.data[b, 0])
                    scores = gate * vocab_dist.data[b].copy()
                    copy_mass: dict = {}
                    for i, text in enumerate(batch.texts[b]):
                        if text is None:
                            continue
                        weight = (1.0 - gate) * float(attention.data[b, i])
                        if text in out_vocab:
                            scores[out_vocab.encode(text)] += weight
                        else:
                            copy_mass[text] = copy_mass.get(text, 0.0) + weight
                else:
                    scores = vocab_dist.data[b].copy()
                    copy_mass = {}
                scores[PAD_ID] = scores[BOS_ID] = -1.0
                best_id = int(np.argmax(scores))
                best_text = out_vocab.decode(best_id)
                best_prob = float(scores[best_id])
                for text, mass in sorted(copy_mass.items()):
                    if mass > best_prob:
                        best_prob, best_text, best_id = mass, text, out_vocab.encode(text)
                if best_id == EOS_ID and best_text == "<eos>":
                    finished[b] = True
                    input_ids[b] = EOS_ID
                else:
                    emitted[b].append(best_text)
                    input_ids[b] = out_vocab.encode(best_text)
            if all(finished):
                break
        return ["".join(texts) for texts in emitted]


# ---------------------------------------------------------------------- train


def train(
    documents: dict,
    split,
    config: ModelConfig,
    training: TrainingConfig,
    chop_config: ChopConfig | None = None,
    lexicon=None,
):
    """Teacher-forced Adam training with per-epoch validation selection.

    Builds vocabularies from the training documents only, then optimizes
    mean sub-token cross-entropy. After each epoch the greedy top-1
    accuracy on the validation documents decides the checkpoint to keep;
    ties keep the later epoch. Returns (checkpoint, per-epoch metrics).
    """
    chop_config = chop_config or ChopConfig()
    lexicon = lexicon or DEFAULT_LEXICON
    train_records = ordered_records(documents, split.train)
    val_records = ordered_records(documents, split.validation)
    if not train_records:
        raise EmptyTrainingSet("no training records")

    vocabularies = {
        stream: build_vocabulary(
            train_records, CORPUS_STREAM_OF[stream], training.min_frequency, chop_config, lexicon
        )
        for stream in config.inputs
    }
    output_min = (
        training.output_min_frequency
        if training.output_min_frequency is not None
        else training.min_frequency
    )
    vocabularies["output"] = build_vocabulary(
        train_records, "name", output_min, chop_config, lexicon
    )

    model = LemmaNameModel(config, chop_config, lexicon, vocabularies, seed=training.seed)
    optimizer = AdamState()
    shuffle_rng = Rng(training.seed)
    best_state = model.parameters.state()
    best_top1 = -1.0
    metrics = []
    for epoch in range(1, training.epochs + 1):
        order = shuffle_rng.permutation(len(train_records))
        total_nll = 0.0
        total_tokens = 0
        for start in range(0, len(order), training.batch_size):
            chunk = [train_records[i] for i in order[start : start + training.batch_size]]
            loss, token_count = model._loss_batch(chunk)
            backward(loss, model.parameters)
            adam_step(
                model.parameters,
                model.parameters.gradients(),
                optimizer,
                lr=training.learning_rate,
                beta1=training.beta1,
                beta2=training.beta2,
            )
            total_nll += float(loss.data) * token_count
            total_tokens += token_count
        if val_records:
            predicted = model.greedy_names(val_records)
            val_top1 = sum(p == r.name for p, r in zip(predicted, val_records)) / len(val_records)
        else:
            val_top1 = 0.0
        if val_top1 >= best_top1:
            best_top1 = val_top1
            best_state = model.parameters.state()
        metrics.append(
            EpochMetrics(epoch=epoch, train_loss=total_nll / total_tokens, validation_top1=val_top1)
        )
    checkpoint = ModelCheckpoint(
        config=config,
        chop_config=chop_config,
        lexicon=lexicon,
        vocabularies=vocabularies,
        parameter_state=best_state,
    )
    return checkpoint, metrics


# ----------------------------------------------------------------- checkpoint


@dataclass
class ModelCheckpoint:
    config: ModelConfig
    chop_config: ChopConfig
    lexicon: object
    vocabularies: dict
    parameter_state: dict
    format_version: int = CHECKPOINT_VERSION

    def to_model(self) -> LemmaNameModel:
        return LemmaNameModel(
            self.config,
            self.chop_config,
            self.lexicon,
            self.vocabularies,
            parameter_state=self.parameter_state,
        )


def _config_digest(header: dict) -> str:
    blob = json.dumps(
        {k: header[k] for k in ("config", "chop_config", "lexicon")},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def save_checkpoint(path, checkpoint: ModelCheckpoint) -> None:
    """Write the deterministic binary checkpoint format.

    Layout: magic "LNCK", little-endian uint32 format version, uint64
    header length, canonical JSON header (sorted keys, no whitespace),
    then the parameter blocks as little-endian float64 in C order, in the
    header's listed order (sorted by name). Identical checkpoints are
    byte-identical.
    """
    header = {
        "format_version": checkpoint.format_version,
        "config": checkpoint.config.to_dict(),
        "chop_config": checkpoint.chop_config.to_dict(),
        "lexicon": checkpoint.lexicon.to_dict(),
        "vocabularies": {name: v.to_dict() for name, v in checkpoint.vocabularies.items()},
        "parameters": [
            {"name": name, "shape": list(checkpoint.parameter_state[name].shape)}
            for name in sorted(checkpoint.parameter_state)
        ],
    }
    header["config_digest"] = _config_digest(header)
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", checkpoint.format_version))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in sorted(checkpoint.parameter_state):
            block = np.ascontiguousarray(checkpoint.parameter_state[name], dtype="<f8")
            fh.write(block.tobytes())


def load_checkpoint(path) -> ModelCheckpoint:
    """Read and validate a checkpoint written by save_checkpoint."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16 or data[:4] != CHECKPOINT_MAGIC:
        raise CorruptCheckpoint("bad magic bytes")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(version, CHECKPOINT_VERSION)
    (header_len,) = struct.unpack_from("<Q", data, 8)
    header_end = 16 + header_len
    if header_end > len(data):
        raise CorruptCheckpoint("truncated header")
    try:
        header = json.loads(data[16:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CorruptCheckpoint(f"unreadable header: {err}") from err
    try:
        if header["config_digest"] != _config_digest(header):
            raise CorruptCheckpoint("configuration digest mismatch")
        config = ModelConfig.from_dict(header["config"])
        chop_config = ChopConfig.from_dict(header["chop_config"])
        lexicon = SuffixLexicon.from_dict(header["lexicon"])
        vocabularies = {
            name: Vocabulary.from_dict(v) for name, v in header["vocabularies"].items()
        }
        entries = [(e["name"], tuple(e["shape"])) for e in header["parameters"]]
    except (KeyError, TypeError, ValueError) as err:
        raise CorruptCheckpoint(f"malformed header: {err}") from err
    offset = header_end
    state = {}
    for name, shape in entries:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(data):
            raise CorruptCheckpoint(f"truncated parameter block: {name}")
        state[name] = np.frombuffer(data[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
        offset = end
    if offset != len(data):
        raise CorruptCheckpoint("trailing bytes after parameter blocks")
    return ModelCheckpoint(
        config=config,
        chop_config=chop_config,
        lexicon=lexicon,
        vocabularies=vocabularies,
        parameter_state=state,
        format_version=version,
    )
