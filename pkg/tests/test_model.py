import dataclasses

import numpy as np
import pytest

from qdren.data import RawStory, Story, Vocabulary, encode_story
from qdren.model import (CheckpointError, ModelConfig, init_params, forward,
                         load_checkpoint, save_checkpoint)
from qdren.tensor import Tensor
from qdren.training import story_loss


def tiny_config(**kw):
    base = dict(d=2, z=2, mode="QDREN", phi_cell="sigmoid", phi_out="identity",
                vocab_size=6, max_sentence_len=3, max_question_len=3, seed=0)
    base.update(kw)
    return ModelConfig(**base)


def tiny_story():
    return Story(sentences=[[2, 3], [4, 2]], question=[5, 3], answer=4)


class TestInit:
    def test_same_seed_identical(self):
        cfg = tiny_config()
        a = init_params(cfg, np.random.default_rng(9))
        b = init_params(cfg, np.random.default_rng(9))
        for (n1, t1), (n2, t2) in zip(a.tensors().items(), b.tensors().items()):
            assert n1 == n2 and np.array_equal(t1.data, t2.data)

    def test_pad_embedding_zero(self):
        params = init_params(tiny_config(), np.random.default_rng(0))
        assert np.array_equal(params.E.data[0], [0.0, 0.0])

    def test_values_in_range(self):
        params = init_params(tiny_config(d=16, z=4, vocab_size=20),
                             np.random.default_rng(1))
        for name in ("E", "U", "V", "W", "R", "H", "keys"):
            assert np.all(np.abs(getattr(params, name).data) < 0.1)

    def test_masks_all_ones(self):
        params = init_params(tiny_config(), np.random.default_rng(2))
        assert np.all(params.f_sent.data == 1.0)
        assert np.all(params.f_quest.data == 1.0)


def forward_oracle(params, story, config):
    """Straight-line float64 evaluation of every model equation."""
    E = params.E.data.astype(np.float64)
    fs = params.f_sent.data.astype(np.float64)
    fq = params.f_quest.data.astype(np.float64)
    U, V, W = (params.U.data.astype(np.float64), params.V.data.astype(np.float64),
               params.W.data.astype(np.float64))
    keys = params.keys.data.astype(np.float64)
    R, H = params.R.data.astype(np.float64), params.H.data.astype(np.float64)
    sig = lambda x: 1.0 / (1.0 + np.exp(-x))

    sents = [sum(E[w] * fs[r] for r, w in enumerate(s)) for s in story.sentences]
    q = sum(E[w] * fq[r] for r, w in enumerate(story.question))

    h = [keys[i].copy() for i in range(config.z)]
    for s in sents:
        for i in range(config.z):
            logit = s @ h[i] + s @ keys[i]
            if config.mode == "QDREN":
                logit += s @ q
            g = sig(logit)
            cand = sig(U @ h[i] + V @ keys[i] + W @ s)   # phi_cell = sigmoid
            h[i] = h[i] + g * cand
            h[i] = h[i] / (np.linalg.norm(h[i]) + 1e-6)
    hm = np.stack(h)
    att = np.exp(hm @ q - (hm @ q).max())
    att /= att.sum()
    u = att @ hm
    return R @ (q + H @ u)                                # phi_out = identity


class TestForward:
    def test_matches_straight_line_oracle(self):
        cfg = tiny_config()
        params = init_params(cfg, np.random.default_rng(3))
        story = tiny_story()
        logits, _, _ = forward(params, story, cfg)
        assert np.allclose(logits.data, forward_oracle(params, story, cfg),
                           atol=1e-5)

    def test_matches_oracle_ren_mode(self):
        cfg = tiny_config(mode="REN")
        params = init_params(cfg, np.random.default_rng(4))
        story = tiny_story()
        logits, _, _ = forward(params, story, cfg)
        assert np.allclose(logits.data, forward_oracle(params, story, cfg),
                           atol=1e-5)

    def test_all_pad_question_makes_modes_identical(self):
        story = Story(sentences=[[2, 3], [4, 2]], question=[0, 0], answer=4)
        out = {}
        for mode in ("REN", "QDREN"):
            cfg = tiny_config(mode=mode)
            params = init_params(cfg, np.random.default_rng(5))
            logits, trace, _ = forward(params, story, cfg)
            out[mode] = (logits.data.tobytes(), trace.gates.tobytes())
        assert out["REN"] == out["QDREN"]

    def test_deterministic_without_dropout(self):
        cfg = tiny_config()
        params = init_params(cfg, np.random.default_rng(6))
        story = tiny_story()
        a, _, _ = forward(params, story, cfg)
        b, _, _ = forward(params, story, cfg)
        assert a.data.tobytes() == b.data.tobytes()

    def test_candidate_restriction_shrinks_logits(self):
        cfg = tiny_config()
        params = init_params(cfg, np.random.default_rng(7))
        story = dataclasses.replace(tiny_story(), candidates=[3, 4])
        logits, _, candidates = forward(params, story, cfg)
        assert logits.shape == (2,)
        assert candidates == [3, 4]

    def test_vocab_permutation_invariance(self):
        cfg = tiny_config()
        params = init_params(cfg, np.random.default_rng(8))
        story = tiny_story()
        base, _, _ = forward(params, story, cfg)
        base_loss = story_loss(params, story, cfg)

        # permute non-reserved vocab ids consistently everywhere
        perm = np.array([0, 1, 4, 2, 5, 3])
        p2 = params.copy()
        p2.E.data = params.E.data[np.argsort(perm)]
        p2.R.data = params.R.data[np.argsort(perm)]
        story2 = Story(sentences=[[int(perm[w]) for w in s] for s in story.sentences],
                       question=[int(perm[w]) for w in story.question],
                       answer=int(perm[story.answer]))
        permuted, _, _ = forward(p2, story2, cfg)
        assert np.allclose(permuted.data, base.data[np.argsort(perm)], atol=1e-6)
        assert np.allclose(story_loss(p2, story2, cfg).data, base_loss.data,
                           atol=1e-6)


class TestCheckpoint:
    def _setup(self, tmp_path):
        cfg = tiny_config()
        params = init_params(cfg, np.random.default_rng(10))
        vocab = Vocabulary(["mary", "kitchen", "where", "is"])
        return cfg, params, vocab, str(tmp_path / "ckpt")

    def test_round_trip_bit_exact(self, tmp_path):
        cfg, params, vocab, path = self._setup(tmp_path)
        save_checkpoint(params, cfg, path, vocab=vocab)
        loaded, cfg2, vocab2 = load_checkpoint(path)
        assert cfg2 == cfg
        assert vocab2.tokens == vocab.tokens
        for name, t in params.tensors().items():
            assert loaded.tensors()[name].data.tobytes() == t.data.tobytes()

    def test_save_load_save_identical_files(self, tmp_path):
        cfg, params, vocab, path = self._setup(tmp_path)
        save_checkpoint(params, cfg, path, vocab=vocab)
        loaded, cfg2, vocab2 = load_checkpoint(path)
        save_checkpoint(loaded, cfg2, str(tmp_path / "again"), vocab=vocab2)
        for suffix in (".manifest.json", ".weights.bin"):
            a = (tmp_path / ("ckpt" + suffix)).read_bytes()
            b = (tmp_path / ("again" + suffix)).read_bytes()
            assert a == b

    def test_truncated_weights_rejected(self, tmp_path):
        cfg, params, vocab, path = self._setup(tmp_path)
        save_checkpoint(params, cfg, path, vocab=vocab)
        blob = (tmp_path / "ckpt.weights.bin").read_bytes()
        (tmp_path / "ckpt.weights.bin").write_bytes(blob[:-4])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_missing_files_rejected(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(str(tmp_path / "nope"))


class TestConfig:
    def test_unknown_keys_rejected(self):
        with pytest.raises(ValueError, match="unknown config keys"):
            ModelConfig.from_dict({"d": 4, "bogus": 1})

    def test_invalid_mode_rejected(self):
        with pytest.raises(ValueError):
            ModelConfig(mode="LSTM")

    def test_even_window_rejected(self):
        with pytest.raises(ValueError):
            ModelConfig(input_style="windows", window=4)
