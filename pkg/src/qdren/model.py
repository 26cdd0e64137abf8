"""Parameter set, full story→answer forward pass, and checkpoint I/O."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .cell import CellParams, GateTrace, initial_state, run_story
from .data import Story, Vocabulary
from .encoding import PAD_ID, encode_question, encode_sentence
from .output import OutputParams, attention, pool, predict
from .tensor import Tensor

INIT_RANGE = 0.1
PRELU_INIT_SLOPE = 0.25


class CheckpointError(ValueError):
    """Corrupt or inconsistent checkpoint files."""


@dataclass
class ModelConfig:
    d: int = 100                      # embedding size
    z: int = 20                       # memory blocks
    mode: str = "QDREN"               # or "REN"
    input_style: str = "sentences"    # or "windows"
    window: int = 5                   # b, odd; used when input_style == "windows"
    phi_cell: str = "prelu"
    phi_out: str = "prelu"            # "sigmoid" for cloze/window runs
    l2: float = 0.0
    dropout: float = 0.0
    lr: float = 0.001
    clip_norm: float = 40.0
    batch_size: int = 32
    optimizer: str = "adam"           # or "rmsprop"
    seed: int = 0
    max_epochs: int = 200
    vocab_size: int = 0               # filled from the dataset
    max_sentence_len: int = 1         # m
    max_question_len: int = 1         # k

    def __post_init__(self):
        if self.mode not in ("REN", "QDREN"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.input_style not in ("sentences", "windows"):
            raise ValueError(f"unknown input style {self.input_style!r}")
        if self.input_style == "windows" and self.window % 2 == 0:
            raise ValueError("window size must be odd")
        if self.optimizer not in ("adam", "rmsprop"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        for name in ("d", "z", "batch_size", "max_epochs", "window",
                     "max_sentence_len", "max_question_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def for_dataset(self, dataset) -> "ModelConfig":
        return dataclasses.replace(
            self,
            vocab_size=len(dataset.vocab),
            max_sentence_len=dataset.max_sentence_len,
            max_question_len=dataset.max_question_len,
        )


@dataclass
class ModelParams:
    """The trainable set: embeddings, masks, shared cell matrices, keys,
    output matrices, and the PReLU slopes."""

    E: Tensor
    f_sent: Tensor
    f_quest: Tensor
    U: Tensor
    V: Tensor
    W: Tensor
    keys: Tensor
    R: Tensor
    H: Tensor
    slope_cell: Tensor
    slope_out: Tensor

    def tensors(self) -> dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def regularized(self, include_slopes: bool = False) -> list[Tensor]:
        """Everything but the embedding matrix (which would swamp the loss)."""
        names = ["f_sent", "f_quest", "U", "V", "W", "keys", "R", "H"]
        if include_slopes:
            names += ["slope_cell", "slope_out"]
        return [getattr(self, n) for n in names]

    def pin_pad_row(self):
        """PAD embedding stays zero and receives no update."""
        self.E.data[PAD_ID, :] = 0.0
        if self.E.grad is not None:
            self.E.grad[PAD_ID, :] = 0.0

    def copy(self) -> "ModelParams":
        kw = {}
        for name, t in self.tensors().items():
            c = Tensor(t.data.copy(), name=t.name)
            kw[name] = c
        return ModelParams(**kw)


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Uniform(-0.1, 0.1) weights, all-ones masks, zero PAD row, slopes 0.25."""
    d, z = config.d, config.z
    V = config.vocab_size

    def u(*shape):
        return Tensor(rng.uniform(-INIT_RANGE, INIT_RANGE, size=shape).astype(T.DTYPE))

    params = ModelParams(
        E=u(V, d),
        f_sent=Tensor(np.ones((config.max_sentence_len, d), dtype=T.DTYPE)),
        f_quest=Tensor(np.ones((config.max_question_len, d), dtype=T.DTYPE)),
        U=u(d, d),
        V=u(d, d),
        W=u(d, d),
        keys=u(z, d),
        R=u(V, d),
        H=u(d, d),
        slope_cell=Tensor(np.asarray(PRELU_INIT_SLOPE, dtype=T.DTYPE)),
        slope_out=Tensor(np.asarray(PRELU_INIT_SLOPE, dtype=T.DTYPE)),
    )
    for name, t in params.tensors().items():
        t.name = name
    params.pin_pad_row()
    return params


def cell_params(params: ModelParams, config: ModelConfig) -> CellParams:
    slope = params.slope_cell if config.phi_cell == "prelu" else None
    return CellParams(U=params.U, V=params.V, W=params.W, keys=params.keys,
                      phi=config.phi_cell, mode=config.mode, phi_slope=slope)


def output_params(params: ModelParams, config: ModelConfig) -> OutputParams:
    slope = params.slope_out if config.phi_out == "prelu" else None
    return OutputParams(R=params.R, H=params.H, phi=config.phi_out, phi_slope=slope)


def forward(params: ModelParams, story: Story, config: ModelConfig,
            rng: np.random.Generator | None = None,
            training: bool = False) -> tuple[Tensor, GateTrace, list[int] | None]:
    """Encode → dynamic memory → output head.

    Returns logits (over story candidates when present, else the full
    vocabulary), the gate trace, and the candidate id list used.
    """
    svecs = [encode_sentence(s, params.E, params.f_sent) for s in story.sentences]
    q = encode_question(story.question, params.E, params.f_quest)
    cp = cell_params(params, config)
    final, trace = run_story(initial_state(cp), svecs, q, cp)
    p = attention(q, final.hiddens)
    u = pool(p, final.hiddens)
    if training and config.dropout > 0:
        if rng is None:
            raise ValueError("training forward with dropout requires an rng")
        u = T.dropout(u, config.dropout, rng)
    logits = predict(q, u, output_params(params, config),
                     candidate_rows=story.candidates)
    return logits, trace, story.candidates


# ---------------------------------------------------------------------------
# Checkpoints: <name>.manifest.json + <name>.weights.bin (little-endian f32)


def _paths(path: str) -> tuple[str, str]:
    return path + ".manifest.json", path + ".weights.bin"


def save_checkpoint(params: ModelParams, config: ModelConfig, path: str,
                    vocab: Vocabulary | None = None):
    manifest_path, weights_path = _paths(path)
    entries = []
    blob = bytearray()
    for name, t in params.tensors().items():
        raw = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(t.data.shape),
                        "offset": len(blob), "nbytes": len(raw)})
        blob.extend(raw)
    manifest = {
        "format": 1,
        "config": config.to_dict(),
        "tensors": entries,
        "total_bytes": len(blob),
    }
    if vocab is not None:
        manifest["vocab"] = vocab.to_list()
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    with open(weights_path, "wb") as f:
        f.write(blob)


def load_checkpoint(path: str) -> tuple[ModelParams, ModelConfig, Vocabulary | None]:
    manifest_path, weights_path = _paths(path)
    if not (os.path.exists(manifest_path) and os.path.exists(weights_path)):
        raise CheckpointError(f"missing checkpoint files for {path!r}")
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"corrupt manifest: {e}") from None
    with open(weights_path, "rb") as f:
        blob = f.read()
    if manifest.get("format") != 1:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format')!r}")
    if len(blob) != manifest["total_bytes"]:
        raise CheckpointError(
            f"weights file has {len(blob)} bytes, manifest says {manifest['total_bytes']}")
    config = ModelConfig.from_dict(manifest["config"])
    kw = {}
    for e in manifest["tensors"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        if e["nbytes"] != 4 * n:
            raise CheckpointError(f"tensor {e['name']!r}: byte length does not match shape")
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=e["offset"])
        kw[e["name"]] = Tensor(arr.reshape(e["shape"]).copy(), name=e["name"])
    try:
        params = ModelParams(**kw)
    except TypeError as e:
        raise CheckpointError(f"manifest tensor set incomplete: {e}") from None
    vocab = Vocabulary.from_list(manifest["vocab"]) if "vocab" in manifest else None
    return params, config, vocab
