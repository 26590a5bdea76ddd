"""Fixed experiment recipes shared by the fixture scripts and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from .corpus import ParallelExample, SyntheticTaskSpec, Vocabulary
from .harness import TrainConfig, TrainResult, synthetic_split, train
from .model import ModelConfig

LEARNABILITY_ORDERS = ("l2r", "r2l", "binary_tree", "common_first", "alpha_az")
SORT_TASK = SyntheticTaskSpec("sort", vocab_size=50, min_len=3, max_len=10, seed=1)
HELD_OUT_SEED = 2


@dataclass(frozen=True)
class SortData:
    train: list[ParallelExample]
    held_out: list[ParallelExample]
    vocab: Vocabulary


def sort_data(n_train: int = 20000, n_held_out: int = 500) -> SortData:
    """Sort task with a target-side frequency vocabulary; held-out draws use their own seed."""
    train_set, vocab = synthetic_split(SORT_TASK, n_train)
    held, _ = synthetic_split(SORT_TASK, n_held_out, vocab, sample_seed=HELD_OUT_SEED)
    return SortData(train_set, held, vocab)


def learnability_configs(order: str, vocab: Vocabulary, steps: int = 20000,
                         checkpoint: Optional[str] = None) -> tuple[TrainConfig, ModelConfig]:
    """Sort-task recipe: desk-scale defaults, except a batch of 64 and no dropout."""
    train_cfg = TrainConfig(order=order, tau=0.5, batch_size=64, steps=steps, lr=3e-3,
                            warmup=min(1000, steps), seed=0, eval_interval=2000, eval_size=100,
                            checkpoint=checkpoint)
    model_cfg = ModelConfig(vocab_size=len(vocab), d_model=64, n_layers=2, n_heads=2, d_ffn=128,
                            max_len=32, dropout_rate=0.0, seed=0)
    return train_cfg, model_cfg


def train_learnability(order: str, checkpoint: str | Path, data: Optional[SortData] = None,
                       steps: int = 20000, on_log: Optional[Callable[[str], None]] = None) -> TrainResult:
    data = data or sort_data()
    train_cfg, model_cfg = learnability_configs(order, data.vocab, steps, str(checkpoint))
    return train(train_cfg, model_cfg, data.train, data.vocab, data.held_out[:100], on_log=on_log)
