"""Scikit-learn style front end: fit/predict over story datasets, with
get_params/set_params so the model composes with the wider ecosystem.
"""
from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator

from .data import RawStory, apply_input_style, build_vocab, encode_story, SplitDataset
from .model import ModelConfig
from .training import evaluate, train, _predict_story


def check_stories(X) -> list[RawStory]:
    """Validate that X is a non-empty sequence of RawStory with answers."""
    stories = list(X)
    if not stories:
        raise ValueError("X must contain at least one story")
    for i, s in enumerate(stories):
        if not isinstance(s, RawStory):
            raise TypeError(f"X[{i}] is {type(s).__name__}, expected RawStory")
        if not s.sentences or not s.question:
            raise ValueError(f"X[{i}] has an empty story or question")
    return stories


class QdrenClassifier(BaseEstimator):
    """Question-dependent recurrent entity network as an estimator.

    X is a sequence of RawStory; the target is each story's answer token
    (pass y to override). predict returns answer tokens.
    """

    def __init__(self, d=32, blocks=10, mode="QDREN", input_style="sentences",
                 window=5, phi_cell="prelu", phi_out="prelu", l2=0.0,
                 dropout=0.0, lr=0.001, clip_norm=40.0, batch_size=32,
                 optimizer="adam", seed=0, max_epochs=200, patience=50,
                 validation_fraction=0.1, max_vocab=50000):
        self.d = d
        self.blocks = blocks
        self.mode = mode
        self.input_style = input_style
        self.window = window
        self.phi_cell = phi_cell
        self.phi_out = phi_out
        self.l2 = l2
        self.dropout = dropout
        self.lr = lr
        self.clip_norm = clip_norm
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.seed = seed
        self.max_epochs = max_epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.max_vocab = max_vocab

    def _config(self) -> ModelConfig:
        return ModelConfig(d=self.d, z=self.blocks, mode=self.mode,
                           input_style=self.input_style, window=self.window,
                           phi_cell=self.phi_cell, phi_out=self.phi_out,
                           l2=self.l2, dropout=self.dropout, lr=self.lr,
                           clip_norm=self.clip_norm, batch_size=self.batch_size,
                           optimizer=self.optimizer, seed=self.seed,
                           max_epochs=self.max_epochs)

    def fit(self, X, y=None):
        stories = check_stories(X)
        if y is not None:
            if len(y) != len(stories):
                raise ValueError("y length must match X")
            stories = [dataclasses.replace(s, answer=a) for s, a in zip(stories, y)]
        stories = apply_input_style(stories, self.input_style, self.window)
        rng = np.random.default_rng(self.seed)
        order = rng.permutation(len(stories))
        n_val = max(1, int(len(stories) * self.validation_fraction))
        if len(stories) < 2:
            raise ValueError("need at least 2 stories to hold out validation data")
        val_idx = set(order[:n_val].tolist())
        vocab = build_vocab([stories], self.max_vocab)
        train_split = [encode_story(stories[i], vocab) for i in range(len(stories))
                       if i not in val_idx]
        valid_split = [encode_story(stories[i], vocab) for i in sorted(val_idx)]
        dataset = SplitDataset(train=train_split, valid=valid_split, test=[],
                               vocab=vocab)
        config = self._config().for_dataset(dataset)
        self.params_, self.report_ = train(config, dataset, patience=self.patience)
        self.config_ = config
        self.vocab_ = vocab
        return self

    def _encode_for_predict(self, X) -> list:
        stories = check_stories(X)
        stories = apply_input_style(stories, self.input_style, self.window)
        return [encode_story(s, self.vocab_) for s in stories]

    def predict(self, X) -> list[str]:
        if not hasattr(self, "params_"):
            raise RuntimeError("estimator is not fitted; call fit first")
        return [self.vocab_.decode(_predict_story(self.params_, s, self.config_))
                for s in self._encode_for_predict(X)]

    def score(self, X, y=None) -> float:
        """Accuracy against y, or against the stories' own answers."""
        preds = self.predict(X)
        answers = list(y) if y is not None else [s.answer for s in X]
        return float(np.mean([p == a for p, a in zip(preds, answers)]))
