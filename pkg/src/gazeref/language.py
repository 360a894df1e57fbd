"""Tokenization, vocabulary, and the expression encoder LSTM."""

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyExpressionError, VocabError
from .numkit import LstmState, lstm_sequence

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ["<pad>", "<bos>", "<eos>", "<unk>"]

_EDGE_PUNCT = ".,!?;:"


def tokenize(text):
    """Lowercase whitespace tokens with edge punctuation stripped."""
    tokens = [t.strip(_EDGE_PUNCT) for t in text.lower().split()]
    tokens = [t for t in tokens if t]
    if not tokens:
        raise EmptyExpressionError(f"no tokens in {text!r}")
    return tokens


@dataclass
class Vocab:
    token_to_id: dict = field(default_factory=dict)
    id_to_token: list = field(default_factory=lambda: list(RESERVED))

    def __len__(self):
        return len(self.id_to_token)

    def encode_token(self, token):
        return self.token_to_id.get(token, UNK)

    def token(self, i):
        if not 0 <= i < len(self.id_to_token):
            raise VocabError(f"id {i} out of range for vocab size {len(self)}")
        return self.id_to_token[i]

    def expression(self, text):
        """Tokenize and encode text into an Expression (terminal <eos>)."""
        tokens = tokenize(text)
        ids = [self.encode_token(t) for t in tokens] + [EOS]
        return Expression(raw=text, token_ids=ids)


def build_vocab(corpus, min_count=1):
    """Deterministic vocab: count >= min_count, sorted (count desc, token asc)."""
    counts = {}
    for text in corpus:
        for tok in tokenize(text):
            counts[tok] = counts.get(tok, 0) + 1
    kept = sorted(
        (t for t, c in counts.items() if c >= min_count),
        key=lambda t: (-counts[t], t),
    )
    vocab = Vocab()
    for t in kept:
        vocab.token_to_id[t] = len(vocab.id_to_token)
        vocab.id_to_token.append(t)
    return vocab


@dataclass
class Expression:
    """Token ids of one referring expression, including the terminal <eos>."""
    raw: str
    token_ids: list

    def __post_init__(self):
        if self.token_ids[-1] != EOS:
            raise VocabError("expression must end with <eos>")
        content = self.token_ids[:-1]
        if not any(i >= len(RESERVED) or i == UNK for i in content):
            # an all-<pad>/<bos>/<eos> body carries no words
            if not content:
                raise EmptyExpressionError("expression with no content tokens")

    @property
    def content_ids(self):
        return self.token_ids[:-1]

    @property
    def lm_input_ids(self):
        """Ids consumed by the language LSTM: <bos> then the content words."""
        return [BOS] + self.content_ids

    @property
    def target_ids(self):
        """Ids predicted at each step: the content words then <eos>."""
        return self.token_ids


def encode_expression(expr, embed_table, lstm_lang_params):
    """Hidden state sequence of the language LSTM.

    Returns (states, caches): one hidden state per prediction position,
    position 0 being the state after consuming <bos>.
    """
    vocab_size = embed_table.shape[0]
    for i in expr.token_ids:
        if not 0 <= i < vocab_size:
            raise VocabError(f"token id {i} out of range ({vocab_size})")
    xs = [embed_table[i] for i in expr.lm_input_ids]
    states, caches = lstm_sequence(xs, lstm_lang_params,
                                   LstmState.zeros(lstm_lang_params.hidden_dim))
    return states, caches
