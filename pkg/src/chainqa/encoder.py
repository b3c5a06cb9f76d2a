"""Question encoding: tokenizer, vocabulary, bidirectional LSTM and attention pooling."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .embedding import ComplexVector

PAD, UNK, NE = "<pad>", "<unk>", "NE"
RESERVED = (PAD, UNK, NE)
GATES = ("f", "i", "o", "c")

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class TokenizeError(ValueError):
    pass


def normalize(text: str) -> list[str]:
    """Lowercase, drop topic brackets, split words and punctuation."""
    return _TOKEN_RE.findall(text.replace("[", " ").replace("]", " ").lower())


class Vocabulary:
    """Token <-> id bijection; ids 0, 1, 2 are padding, unknown and the topic mask."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.tokens: list[str] = list(RESERVED)
        self.ids: dict[str, int] = {t: i for i, t in enumerate(self.tokens)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self.ids:
            self.ids[token] = len(self.tokens)
            self.tokens.append(token)
        return self.ids[token]

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def id(self, token: str) -> int:
        return self.ids.get(token, self.ids[UNK])

    @property
    def pad_id(self) -> int:
        return self.ids[PAD]

    @property
    def unk_id(self) -> int:
        return self.ids[UNK]

    @property
    def ne_id(self) -> int:
        return self.ids[NE]

    @classmethod
    def build(cls, questions: Iterable[tuple[str, str]], mask_topic: bool, min_freq: int = 1) -> "Vocabulary":
        """Vocabulary over ``(question, topic_mention)`` pairs, in first-seen order."""
        counts: dict[str, int] = {}
        for question, mention in questions:
            for tok in _surface_tokens(question, mention, mask_topic)[0]:
                counts[tok] = counts.get(tok, 0) + 1
        return cls(t for t, c in counts.items() if c >= min_freq and t not in RESERVED)

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> "Vocabulary":
        if tuple(tokens[:len(RESERVED)]) != RESERVED:
            raise ValueError(f"vocabulary must start with the reserved tokens {RESERVED}")
        vocab = cls(tokens[len(RESERVED):])
        if vocab.tokens != list(tokens):
            raise ValueError("vocabulary token list contains duplicates")
        return vocab

    def detokenize(self, ids: Sequence[int]) -> str:
        return " ".join(self.tokens[i] for i in ids)


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    topic_span: tuple[int, int] | None = None

    def __len__(self) -> int:
        return len(self.ids)


def _find(seq: list[str], sub: list[str]) -> int:
    for i in range(len(seq) - len(sub) + 1):
        if seq[i:i + len(sub)] == sub:
            return i
    return -1


def _surface_tokens(question: str, mention: str, mask_topic: bool) -> tuple[list[str], tuple[int, int] | None]:
    toks = normalize(question)
    mtoks = normalize(mention) if mention else []
    start = _find(toks, mtoks) if mtoks else -1
    if mask_topic:
        if start < 0:
            raise TokenizeError(f"topic mention {mention!r} not found in {question!r}")
        return toks[:start] + [NE] + toks[start + len(mtoks):], (start, start + 1)
    return toks, ((start, start + len(mtoks)) if start >= 0 else None)


def tokenize(question: str, topic_mention: str, vocab: Vocabulary, mask_topic: bool) -> TokenSequence:
    if not question.strip():
        raise TokenizeError("empty question")
    toks, span = _surface_tokens(question, topic_mention, mask_topic)
    if not toks:
        raise TokenizeError(f"no tokens in {question!r}")
    return TokenSequence(tuple(vocab.id(t) for t in toks), span)


# ---------------------------------------------------------------- parameters

class LSTMDirection:
    """Gate weights of one LSTM direction.

    The four gates are stored side by side: ``w_x`` is (input, 4*hidden),
    ``w_h`` is (hidden, 4*hidden) and ``b`` is (4*hidden,), with column blocks
    in the order forget, input, output, cell candidate.
    """

    def __init__(self, input_dim: int, hidden: int, rng: np.random.Generator | None = None):
        self.input_dim, self.hidden = input_dim, hidden
        if rng is None:
            wx = np.zeros((input_dim, 4 * hidden))
            wh = np.zeros((hidden, 4 * hidden))
        else:
            wx = np.concatenate([ad.xavier_init((input_dim, hidden), rng) for _ in GATES], axis=1)
            wh = np.concatenate([ad.xavier_init((hidden, hidden), rng) for _ in GATES], axis=1)
        self.w_x = ad.parameter(wx)
        self.w_h = ad.parameter(wh)
        self.b = ad.parameter(np.zeros(4 * hidden))

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(W_x, W_h, b) of one gate as plain arrays, W acting on column vectors."""
        k = GATES.index(name)
        cols = slice(k * self.hidden, (k + 1) * self.hidden)
        return self.w_x.data[:, cols].T, self.w_h.data[:, cols].T, self.b.data[cols]

    def named_parameters(self, prefix: str) -> dict[str, ad.Tensor]:
        return {f"{prefix}.w_x": self.w_x, f"{prefix}.w_h": self.w_h, f"{prefix}.b": self.b}

    def run(self, xs: Sequence[ad.Tensor]) -> list[ad.Tensor]:
        """Unroll over ``xs`` (each (batch, input)) from zero state."""
        H = self.hidden
        batch = xs[0].shape[0]
        h = ad.Tensor(np.zeros((batch, H)))
        c = ad.Tensor(np.zeros((batch, H)))
        out = []
        for x in xs:
            z = ad.add(ad.add(ad.matmul(x, self.w_x), ad.matmul(h, self.w_h)), self.b)
            f = ad.sigmoid(z[:, 0:H])
            i = ad.sigmoid(z[:, H:2 * H])
            o = ad.sigmoid(z[:, 2 * H:3 * H])
            g = ad.tanh(z[:, 3 * H:4 * H])
            c = ad.add(ad.mul(f, c), ad.mul(i, g))
            h = ad.mul(o, ad.tanh(c))
            out.append(h)
        return out


def weighted_sum(alpha: ad.Tensor, hiddens: Sequence[ad.Tensor]) -> ad.Tensor:
    """sum_j alpha[:, j] * hiddens[j] for (batch, L) weights and L tensors of (batch, D)."""
    batch = hiddens[0].shape[0]
    out = None
    for j, h in enumerate(hiddens):
        term = ad.mul(ad.reshape(alpha[:, j], (batch, 1)), h)
        out = term if out is None else ad.add(out, term)
    return out


class SequenceEncoder:
    """Single-layer BiLSTM followed by attention pooling.

    With ``attention=False`` the hidden states are mean-pooled instead.
    """

    def __init__(self, input_dim: int, hidden: int, rng: np.random.Generator | None = None,
                 attention: bool = True):
        self.input_dim, self.hidden, self.attention = input_dim, hidden, attention
        self.forward = LSTMDirection(input_dim, hidden, rng)
        self.backward = LSTMDirection(input_dim, hidden, rng)
        wa = ad.xavier_init((2 * hidden, 1), rng)[:, 0] if rng is not None else np.zeros(2 * hidden)
        self.attn_w = ad.parameter(wa)
        self.attn_b = ad.parameter(np.zeros(1))

    @property
    def output_dim(self) -> int:
        return 2 * self.hidden

    def named_parameters(self, prefix: str) -> dict[str, ad.Tensor]:
        out = {}
        out.update(self.forward.named_parameters(f"{prefix}.fwd"))
        out.update(self.backward.named_parameters(f"{prefix}.bwd"))
        out[f"{prefix}.attn_w"] = self.attn_w
        out[f"{prefix}.attn_b"] = self.attn_b
        return out

    def states(self, xs: Sequence[ad.Tensor]) -> list[ad.Tensor]:
        if len(xs) == 0:
            raise ad.ShapeError("empty sequence")
        fwd = self.forward.run(xs)
        bwd = self.backward.run(list(reversed(xs)))[::-1]
        return [ad.concat([f, b], axis=1) for f, b in zip(fwd, bwd)]

    def attention_weights(self, hiddens: Sequence[ad.Tensor]) -> ad.Tensor:
        scores = [ad.tanh(ad.add(ad.matmul(h, self.attn_w), self.attn_b)) for h in hiddens]
        return ad.softmax(ad.stack(scores, axis=1), axis=1)

    def pool(self, hiddens: Sequence[ad.Tensor]) -> ad.Tensor:
        if len(hiddens) == 0:
            raise ad.ShapeError("empty sequence")
        if len(hiddens) == 1:
            return hiddens[0]
        if not self.attention:
            total = hiddens[0]
            for h in hiddens[1:]:
                total = ad.add(total, h)
            return ad.mul(total, 1.0 / len(hiddens))
        return weighted_sum(self.attention_weights(hiddens), hiddens)

    def encode(self, xs: Sequence[ad.Tensor]) -> ad.Tensor:
        return self.pool(self.states(xs))


class QuestionEncoder:
    """Word embeddings + :class:`SequenceEncoder`; embedding size equals hidden size."""

    def __init__(self, vocab_size: int, hidden: int, rng: np.random.Generator | None = None,
                 attention: bool = True):
        self.vocab_size, self.hidden = vocab_size, hidden
        emb = ad.xavier_init((vocab_size, hidden), rng) if rng is not None else np.zeros((vocab_size, hidden))
        self.embedding = ad.parameter(emb)
        self.seq = SequenceEncoder(hidden, hidden, rng, attention)

    @property
    def output_dim(self) -> int:
        return 2 * self.hidden

    def named_parameters(self, prefix: str) -> dict[str, ad.Tensor]:
        out = {f"{prefix}.embedding": self.embedding}
        out.update(self.seq.named_parameters(prefix))
        return out

    def embed(self, ids: np.ndarray) -> list[ad.Tensor]:
        """``ids`` is (batch, length); returns one (batch, hidden) tensor per position."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None, :]
        if ids.shape[1] == 0:
            raise ad.ShapeError("empty token sequence")
        if ids.min() < 0 or ids.max() >= self.vocab_size:
            raise ValueError(f"token id outside vocabulary of size {self.vocab_size}")
        return [ad.take_rows(self.embedding, ids[:, j]) for j in range(ids.shape[1])]

    def encode_batch(self, ids: np.ndarray) -> ad.Tensor:
        return self.seq.encode(self.embed(ids))


# ---------------------------------------------------------------- single-sequence API

def bilstm_forward(encoder: SequenceEncoder, embedded: np.ndarray) -> np.ndarray:
    """(L, input) -> (L, 2*hidden) hidden states, forward half first."""
    embedded = np.asarray(embedded, dtype=np.float64)
    if embedded.ndim != 2 or embedded.shape[0] == 0:
        raise ad.ShapeError(f"expected a non-empty (length, input) array, got {embedded.shape}")
    xs = [ad.Tensor(embedded[j:j + 1]) for j in range(embedded.shape[0])]
    return np.concatenate([h.data for h in encoder.states(xs)], axis=0)


def self_attention(hiddens: np.ndarray, encoder: SequenceEncoder) -> np.ndarray:
    hiddens = np.asarray(hiddens, dtype=np.float64)
    if hiddens.ndim != 2 or hiddens.shape[0] == 0:
        raise ad.ShapeError(f"expected a non-empty (length, dim) array, got {hiddens.shape}")
    return encoder.pool([ad.Tensor(h[None, :]) for h in hiddens]).data[0]


def encode_question(encoder: QuestionEncoder, tokens: TokenSequence) -> np.ndarray:
    return encoder.encode_batch(np.asarray([tokens.ids])).data[0]


class Projection:
    """Affine map from an encoder output to a complex relation vector (real block first)."""

    def __init__(self, in_dim: int, dim: int, rng: np.random.Generator | None = None):
        self.in_dim, self.dim = in_dim, dim
        w = ad.xavier_init((in_dim, 2 * dim), rng) if rng is not None else np.zeros((in_dim, 2 * dim))
        self.w = ad.parameter(w)
        self.b = ad.parameter(np.zeros(2 * dim))

    def named_parameters(self, prefix: str) -> dict[str, ad.Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        return ad.add(ad.matmul(x, self.w), self.b)


def project_to_relation(encoding: np.ndarray, projection: Projection) -> ComplexVector:
    encoding = np.asarray(encoding, dtype=np.float64)
    if encoding.shape[-1] != projection.in_dim:
        raise ad.ShapeError(f"encoding has {encoding.shape[-1]} dims, projection expects {projection.in_dim}")
    return ComplexVector.from_concat(projection(ad.Tensor(encoding)).data)
