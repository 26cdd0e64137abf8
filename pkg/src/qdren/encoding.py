"""Sentence/question vectorization with trainable multiplicative masks,
plus the window builder for cloze-style input.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

PAD_TOKEN = "PAD"
UNK_TOKEN = "UNK"
PAD_ID = 0
UNK_ID = 1


class SentenceTooLongError(ValueError):
    """Sentence exceeds the mask length; rejected rather than truncated."""


@dataclass
class MaskBank:
    """Per-position trainable masks for sentences (m rows) and questions (k rows)."""

    f_sent: Tensor
    f_quest: Tensor

    @property
    def m(self) -> int:
        return self.f_sent.shape[0]

    @property
    def k(self) -> int:
        return self.f_quest.shape[0]


def _encode(token_ids, E: Tensor, mask: Tensor, what: str) -> Tensor:
    n = len(token_ids)
    if n > mask.shape[0]:
        raise SentenceTooLongError(
            f"{what} has {n} tokens but the mask allows at most {mask.shape[0]}"
        )
    d = E.shape[1]
    if n == 0:
        return T.constant(np.zeros(d, dtype=T.DTYPE))
    emb = T.gather_rows(E, token_ids)
    msk = T.gather_rows(mask, np.arange(n))
    return T.sum_rows(T.mul(emb, msk))


def encode_sentence(token_ids, E: Tensor, mask: Tensor) -> Tensor:
    """Sum over tokens of embedding ⊙ positional mask; empty sentence -> 0."""
    return _encode(token_ids, E, mask, "sentence")


def encode_question(token_ids, E: Tensor, mask: Tensor) -> Tensor:
    return _encode(token_ids, E, mask, "question")


def build_windows(tokens: list, entity_positions: list[int], b: int,
                  pad_token=PAD_TOKEN) -> list[list]:
    """b-token windows centered on each entity occurrence.

    The text is padded with b-1 boundary tokens on each side (2(b-1) total)
    so windows at the edges stay well formed.
    """
    if b < 1 or b % 2 == 0:
        raise ValueError(f"window size must be odd and >= 1, got {b}")
    half = (b - 1) // 2
    padded = [pad_token] * (b - 1) + list(tokens) + [pad_token] * (b - 1)
    windows = []
    for pos in entity_positions:
        if not 0 <= pos < len(tokens):
            raise ValueError(f"entity position {pos} outside text of length {len(tokens)}")
        center = pos + (b - 1)
        windows.append(padded[center - half:center + half + 1])
    return windows


def build_question_window(tokens: list, placeholder, b: int, pad_token=PAD_TOKEN) -> list:
    """The single window around the placeholder marker of a cloze question."""
    positions = [i for i, t in enumerate(tokens) if t == placeholder]
    if len(positions) != 1:
        raise ValueError(
            f"expected exactly one {placeholder!r} in the question, found {len(positions)}"
        )
    return build_windows(tokens, positions, b, pad_token=pad_token)[0]
