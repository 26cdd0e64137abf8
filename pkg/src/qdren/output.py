"""Output head: question attention over memory blocks, pooled state, and
answer scoring, plus the regularized training loss.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class OutputParams:
    R: Tensor                     # C×d, C = |V| or |candidates|
    H: Tensor                     # d×d
    phi: str = "prelu"
    phi_slope: Tensor | None = None


def attention(q: Tensor, hiddens: Tensor) -> Tensor:
    """softmax over blocks of qᵀh_i; hiddens is z×d."""
    return T.softmax(T.matmul(hiddens, q))


def pool(p: Tensor, hiddens: Tensor) -> Tensor:
    """u = Σ p_j h_j, the attention-weighted memory summary."""
    return T.matvec_transposed(hiddens, p)


def predict(q: Tensor, u: Tensor, params: OutputParams,
            candidate_rows=None) -> Tensor:
    """Logits R φ(q + H u); `candidate_rows` restricts R to a row subset."""
    hidden = T.activation(params.phi, T.add(q, T.matmul(params.H, u)),
                          slope=params.phi_slope)
    R = params.R if candidate_rows is None else T.gather_rows(params.R, candidate_rows)
    return T.matmul(R, hidden)


def loss(logits: Tensor, target_index: int, regularized: list[Tensor],
         lam: float) -> Tensor:
    """Cross entropy plus λ · Σ‖θ‖² over the regularized parameter list."""
    if lam < 0:
        raise ValueError("regularization weight must be non-negative")
    total = T.cross_entropy(logits, target_index)
    if lam > 0:
        reg = None
        for p in regularized:
            sq = T.sum_squares(p)
            reg = sq if reg is None else T.add(reg, sq)
        if reg is not None:
            total = T.add(total, T.scale(reg, lam))
    return total
