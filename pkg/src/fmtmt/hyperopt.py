"""Seeded random search over transformer hyperparameters.

Each trial samples a configuration, trains for a fixed number of epochs,
and records token accuracy on the validation set; the best-scoring
configuration wins. Samples violating the head-divisibility constraint are
rejected, logged, and redrawn.
"""
from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from typing import Sequence

from . import textnorm
from .model import (
    DivergenceError,
    LabeledPair,
    ModelConfig,
    TrainConfig,
    Vocabulary,
    build_vocab,
    train,
)


class AllTrialsDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchSpace:
    embed_dim_choices: tuple[int, ...] = (32, 64, 128)
    latent_dim_choices: tuple[int, ...] = (64, 128, 256)
    num_heads_choices: tuple[int, ...] = (2, 4, 8)
    batch_size_choices: tuple[int, ...] = (16, 32, 64)
    seq_len_choices: tuple[int, ...] = (20, 50, 100)
    trial_budget: int = 10
    epochs_per_trial: int = 30
    seed: int = 0

    def __post_init__(self) -> None:
        if self.trial_budget < 1:
            raise ValueError(f"trial_budget must be >= 1, got {self.trial_budget}")
        if self.epochs_per_trial < 1:
            raise ValueError("epochs_per_trial must be >= 1")


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    config: dict
    accuracy: float | None
    status: str  # "ok" | "diverged" | "rejected"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class SearchResult:
    best_config: ModelConfig
    best_accuracy: float
    trials: list[TrialRecord] = field(default_factory=list)


def _sample(rng: random.Random, space: SearchSpace) -> dict:
    return {
        "embed_dim": rng.choice(space.embed_dim_choices),
        "latent_dim": rng.choice(space.latent_dim_choices),
        "num_heads": rng.choice(space.num_heads_choices),
        "batch_size": rng.choice(space.batch_size_choices),
        "seq_len": rng.choice(space.seq_len_choices),
    }


def search(
    space: SearchSpace,
    train_pairs: Sequence[LabeledPair],
    val_pairs: Sequence[LabeledPair],
    learning_rate: float = 1e-3,
    use_control: bool = True,
    norm_cfg: textnorm.NormalizationConfig = textnorm.DEFAULT_CONFIG,
) -> SearchResult:
    """Run the random search; deterministic given space.seed.

    Raises AllTrialsDivergedError when no trial finishes with a finite
    loss. Rejected (invalid) samples appear in the log with status
    "rejected" and do not consume budget.
    """
    src_vocab = build_vocab([textnorm.tokenize(p.source, norm_cfg) for p in train_pairs])
    tgt_vocab = build_vocab([textnorm.tokenize(p.target, norm_cfg) for p in train_pairs])
    rng = random.Random(space.seed)
    trials: list[TrialRecord] = []
    best: tuple[float, ModelConfig] | None = None
    completed = 0
    trial_index = 0
    while completed < space.trial_budget:
        sampled = _sample(rng, space)
        if sampled["embed_dim"] % sampled["num_heads"] != 0:
            trials.append(TrialRecord(trial_index, sampled, None, "rejected"))
            trial_index += 1
            continue
        batch_size = sampled.pop("batch_size")
        cfg = ModelConfig(
            src_vocab_size=src_vocab.size,
            tgt_vocab_size=tgt_vocab.size,
            use_control=use_control,
            **sampled,
        )
        train_cfg = TrainConfig(
            epochs=space.epochs_per_trial,
            batch_size=batch_size,
            learning_rate=learning_rate,
            seed=_trial_seed(space.seed, trial_index),
        )
        logged = dict(sampled, batch_size=batch_size)
        try:
            _, history = train(
                train_pairs, val_pairs, src_vocab, tgt_vocab, cfg, train_cfg, norm_cfg
            )
        except DivergenceError:
            trials.append(TrialRecord(trial_index, logged, None, "diverged"))
        else:
            accuracy = history.final_accuracy()
            trials.append(TrialRecord(trial_index, logged, accuracy, "ok"))
            if best is None or accuracy > best[0]:
                best = (accuracy, cfg)
        completed += 1
        trial_index += 1
    if best is None:
        raise AllTrialsDivergedError(f"all {space.trial_budget} trials diverged")
    return SearchResult(best_config=best[1], best_accuracy=best[0], trials=trials)


def _trial_seed(seed: int, trial_index: int) -> int:
    return (seed * 1_000_003 + trial_index) % (2**31)


def write_trial_log(result: SearchResult, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for record in result.trials:
            handle.write(record.to_json() + "\n")
