"""Dynamic memory: z keyed blocks updated per sentence through a gating
function. QDREN mode adds the sentence-question dot product to the gate;
REN mode omits it. U, V, W are shared across blocks.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

MODES = ("REN", "QDREN")


@dataclass
class CellParams:
    U: Tensor
    V: Tensor
    W: Tensor
    keys: Tensor          # z×d, one key per block
    phi: str = "prelu"
    mode: str = "QDREN"
    phi_slope: Tensor | None = None  # required when phi == "prelu"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def z(self) -> int:
        return self.keys.shape[0]


@dataclass
class MemoryState:
    hiddens: Tensor  # z×d


@dataclass
class GateTrace:
    """z×t matrix of gate activations for one story (heatmap payload)."""

    gates: np.ndarray
    sentence_labels: list[str] = field(default_factory=list)
    question_text: str = ""

    @property
    def z(self) -> int:
        return self.gates.shape[0]

    @property
    def t(self) -> int:
        return self.gates.shape[1]


def initial_state(params: CellParams) -> MemoryState:
    """Memories start at their keys, giving each block identity from step
    one; gradient flows through this initialization into the keys."""
    return MemoryState(hiddens=params.keys)


def gate(s_t: Tensor, h_prev: Tensor, key: Tensor, q: Tensor, mode: str) -> Tensor:
    """σ(sᵀh + sᵀk [+ sᵀq]) for a single block; scalar in (0,1)."""
    logit = T.add(T.dot(s_t, h_prev), T.dot(s_t, key))
    if mode == "QDREN":
        logit = T.add(logit, T.dot(s_t, q))
    elif mode != "REN":
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return T.activation("sigmoid", logit)


def candidate(h_prev: Tensor, key: Tensor, s_t: Tensor, params: CellParams) -> Tensor:
    """φ(U h + V k + W s) for a single block."""
    pre = T.add(T.add(T.matmul(params.U, h_prev), T.matmul(params.V, key)),
                T.matmul(params.W, s_t))
    return T.activation(params.phi, pre, slope=params.phi_slope)


def step(state: MemoryState, s_t: Tensor, q: Tensor, params: CellParams,
         norm_eps: float = 1e-6) -> tuple[MemoryState, Tensor]:
    """One sentence update over all blocks at once.

    Gate, candidate, additive update, then L2 reset with an eps guard.
    Returns the new state and the z gate activations.
    """
    H = state.hiddens                       # z×d
    K = params.keys                         # z×d
    logits = T.add(T.matmul(H, s_t), T.matmul(K, s_t))   # sᵀh_i + sᵀk_i per block
    if params.mode == "QDREN":
        logits = T.add_scalar(logits, T.dot(s_t, q))
    g = T.activation("sigmoid", logits)     # z

    ws = T.matmul(params.W, s_t)            # d
    pre = T.add_rowvec(T.add(T.matmul_t(H, params.U), T.matmul_t(K, params.V)), ws)
    cand = T.activation(params.phi, pre, slope=params.phi_slope)  # z×d

    updated = T.add(H, T.scale_rows(cand, g))
    new_h = T.normalize_rows(updated, eps=norm_eps)
    return MemoryState(hiddens=new_h), g


def run_story(initial: MemoryState, sentence_vectors: list[Tensor], q: Tensor,
              params: CellParams) -> tuple[MemoryState, GateTrace]:
    """Fold step over the story's sentences; trace column t holds g^(t)."""
    if not sentence_vectors:
        raise ValueError("story must contain at least one sentence")
    state = initial
    cols = []
    for s_t in sentence_vectors:
        state, g = step(state, s_t, q, params)
        cols.append(g.data.copy())
    trace = GateTrace(gates=np.stack(cols, axis=1))
    return state, trace
