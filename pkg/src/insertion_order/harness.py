"""Training loop, decode/eval helpers and the temperature x EOS-penalty sweep."""

from __future__ import annotations

import copy
import logging
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
import torch

from .canvas import ALIGN_SIDES, Canvas, realign, rollin_sample, valid_actions
from .corpus import (
    ParallelExample,
    SyntheticTaskSpec,
    Vocabulary,
    build_vocabulary,
    generate_synthetic,
    synthetic_vocabulary,
)
from .decoder import DecodeConfig, SlotModel, decode
from .evaluation import AdherenceReport, adherence, corpus_bleu, trace_adherence
from .model import (
    InsertionTransformer,
    ModelConfig,
    load_checkpoint,
    policy_targets,
    save_checkpoint,
    sequence_losses,
)
from .oracle import build_policy
from .orders import OrderSpec

log = logging.getLogger(__name__)

TAU_GRID = (0.5, 1.0, 2.0)
EOS_PENALTY_GRID = tuple(i * 0.5 for i in range(17))  # 0, 0.5, ..., 8
MODES = ("serial", "parallel")


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, message: str, last_good: InsertionTransformer) -> None:
        super().__init__(f"training diverged at step {step}: {message}")
        self.step = step
        self.last_good = last_good


@dataclass(frozen=True)
class TrainConfig:
    order: str = "uniform"
    tau: float = 1.0
    batch_size: int = 32
    steps: int = 20000
    lr: float = 3e-3
    warmup: int = 1000
    seed: int = 0
    eval_interval: int = 1000
    eval_size: int = 100
    checkpoint: Optional[str] = None
    align_side: str = "left"  # re-alignment of roll-ins with repeated tokens

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if not self.tau > 0 or math.isinf(self.tau):
            raise ValueError("tau must be in (0, inf)")
        if self.warmup > max(self.steps, 1) or self.warmup < 0:
            raise ValueError("warmup must lie in [0, steps]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.align_side not in ALIGN_SIDES:
            raise ValueError(f"align_side must be one of {', '.join(ALIGN_SIDES)}")


def learning_rate(step: int, peak: float, warmup: int) -> float:
    """Linear warmup to ``peak`` then inverse square-root decay (``step`` counts from 1)."""
    if warmup <= 0:
        return peak / math.sqrt(step)
    return peak * min(step / warmup, math.sqrt(warmup / step))


@dataclass
class TrainResult:
    model: InsertionTransformer
    log: list[str] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)


def evaluate_model(model, order: OrderSpec, examples: Sequence[ParallelExample],
                   cfg: DecodeConfig = DecodeConfig()) -> tuple[float, AdherenceReport, list[tuple[int, ...]]]:
    """Dev BLEU under ``cfg`` plus serial adherence (from the same decode when serial)."""
    outputs, report = [], AdherenceReport(0, 0)
    for ex in examples:
        out, trace = decode(model, ex.source, cfg)
        outputs.append(out)
        if cfg.mode == "serial":
            posteriors = None
            if order.adaptive:
                prepared = model.prepare(ex.source)
                posteriors = [model.slot_distributions(prepared, s.before).joint_logp() for s in trace.steps]
            report = report + trace_adherence(order, trace.steps, ex.target, posteriors)
    if cfg.mode != "serial":
        report = adherence(model, order, examples, DecodeConfig("serial", cfg.eos_penalty))
    bleu = corpus_bleu(outputs, [ex.target for ex in examples]).bleu
    return bleu, report, outputs


def training_losses(model: InsertionTransformer, order: OrderSpec, tau: float,
                    sources: Sequence[Sequence[int]], canvases: Sequence[Canvas]) -> torch.Tensor:
    """Per-example losses toward the oracle policies of rolled-in ``canvases``.

    Adaptive orders read the posterior from this same forward pass, detached, so
    the target is a constant.
    """
    content_logp, location_logp, slot_mask = model(sources, [c.hypothesis for c in canvases])
    joint = None
    if order.adaptive:
        joint = (content_logp + location_logp[..., None]).detach().double().numpy()
    policies = [
        build_policy(order, valid_actions(c), tau, None if joint is None else joint[b])
        for b, c in enumerate(canvases)
    ]
    q_content, q_location = policy_targets(policies, model.config.vocab_size, content_logp.dtype)
    return sequence_losses(content_logp, location_logp, slot_mask, q_content, q_location)


def train(cfg: TrainConfig, model_cfg: ModelConfig, data: Sequence[ParallelExample], vocab: Vocabulary,
          dev: Optional[Sequence[ParallelExample]] = None,
          on_log: Optional[Callable[[str], None]] = None) -> TrainResult:
    if not data:
        raise ValueError("training data is empty")
    torch.manual_seed(cfg.seed)
    rng = random.Random(cfg.seed)
    order = OrderSpec(cfg.order, vocab)
    model = InsertionTransformer(model_cfg)
    result = TrainResult(model)
    if cfg.steps == 0:
        return result

    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(0.9, 0.98), eps=1e-9)
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda i: learning_rate(i + 1, 1.0, cfg.warmup))
    last_good = copy.deepcopy(model.state_dict())
    dev = list(dev[: cfg.eval_size]) if dev else []
    running = []

    for step in range(1, cfg.steps + 1):
        model.train()
        batch = [data[rng.randrange(len(data))] for _ in range(cfg.batch_size)]
        canvases = [realign(rollin_sample(ex.target, rng), cfg.align_side, rng) for ex in batch]
        losses = training_losses(model, order, cfg.tau, [ex.source for ex in batch], canvases)
        loss = losses.mean()
        if not torch.isfinite(loss):
            bad = int((~torch.isfinite(losses)).nonzero()[0, 0])
            model.load_state_dict(last_good)
            if cfg.checkpoint:
                save_checkpoint(model, cfg.checkpoint)
            raise TrainingDiverged(step, f"non-finite loss for batch example {bad}", model)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
        opt.step()
        sched.step()
        value = float(loss.detach())
        result.losses.append(value)
        running.append(value)

        if cfg.eval_interval and (step % cfg.eval_interval == 0 or step == cfg.steps):
            bleu, adh = (math.nan, math.nan)
            if dev:
                b, report, _ = evaluate_model(model, order, dev)
                bleu, adh = b, report.percentage
            line = f"{step} {np.mean(running):.6f} {bleu:.4f} {adh:.4f}"
            running = []
            result.log.append(line)
            if on_log:
                on_log(line)
            log.info("step %s", line)
            last_good = copy.deepcopy(model.state_dict())

    model.eval()
    if cfg.checkpoint:
        save_checkpoint(model, cfg.checkpoint)
    return result


@dataclass(frozen=True)
class GridPoint:
    tau: float
    eos_penalty: float
    mode: str


@dataclass
class SweepResult:
    taus: tuple[float, ...]
    penalties: tuple[float, ...]
    modes: tuple[str, ...]
    bleu: dict[GridPoint, float]
    adherence: dict[GridPoint, Optional[float]]

    def best(self, mode: str, tau: Optional[float] = None) -> GridPoint:
        """Highest BLEU; ties go to the smaller penalty, then the smaller temperature."""
        points = [p for p in self.bleu if p.mode == mode and (tau is None or p.tau == tau)]
        return min(points, key=lambda p: (-self.bleu[p], p.eos_penalty, p.tau))

    def render(self) -> str:
        out = ["# BLEU without EOS penalty (best-penalty BLEU @ penalty)"]
        out.append("tau\t" + "\t".join(self.modes))
        for tau in self.taus:
            cells = []
            for mode in self.modes:
                base = self.bleu[GridPoint(tau, self.penalties[0], mode)]
                best = self.best(mode, tau)
                cells.append(f"{base:.2f} ({self.bleu[best]:.2f} @ {best.eos_penalty:g})")
            out.append(f"{tau:g}\t" + "\t".join(cells))
        for mode in self.modes:
            b = self.best(mode)
            out.append(f"# best {mode}: tau={b.tau:g} eos_penalty={b.eos_penalty:g} bleu={self.bleu[b]:.4f}")
        for metric in ("bleu", "adherence"):
            for mode in self.modes:
                table = self.bleu if metric == "bleu" else self.adherence
                out.append(f"# {metric} mode={mode}")
                out.append("tau\\eos\t" + "\t".join(f"{g:g}" for g in self.penalties))
                for tau in self.taus:
                    vals = [table[GridPoint(tau, g, mode)] for g in self.penalties]
                    out.append(f"{tau:g}\t" + "\t".join("-" if v is None else f"{v:.2f}" for v in vals))
        return "\n".join(out) + "\n"


def sweep(checkpoints: Mapping[float, "str | Path | SlotModel"], dev: Sequence[ParallelExample],
          order: OrderSpec, taus: Sequence[float] = TAU_GRID,
          penalties: Sequence[float] = EOS_PENALTY_GRID, modes: Sequence[str] = MODES) -> SweepResult:
    """Decode ``dev`` at every (tau, penalty, mode); one checkpoint per temperature."""
    bleu: dict[GridPoint, float] = {}
    adh: dict[GridPoint, Optional[float]] = {}
    for tau in taus:
        if tau not in checkpoints:
            raise FileNotFoundError(f"no checkpoint for grid point tau={tau:g}")
        source = checkpoints[tau]
        if isinstance(source, (str, Path)):
            if not Path(source).exists():
                raise FileNotFoundError(f"missing checkpoint {source} for grid point tau={tau:g}")
            model = load_checkpoint(source)
        else:
            model = source
        for mode in modes:
            for gamma in penalties:
                point = GridPoint(float(tau), float(gamma), mode)
                outputs = []
                report = AdherenceReport(0, 0)
                for ex in dev:
                    out, trace = decode(model, ex.source, DecodeConfig(mode, gamma))
                    outputs.append(out)
                    if mode == "serial" and not order.adaptive:
                        report = report + trace_adherence(order, trace.steps, ex.target)
                bleu[point] = corpus_bleu(outputs, [ex.target for ex in dev]).bleu
                if mode == "serial":
                    if order.adaptive:
                        report = adherence(model, order, dev, DecodeConfig("serial", gamma))
                    adh[point] = report.percentage
                else:
                    adh[point] = None
    return SweepResult(tuple(float(t) for t in taus), tuple(float(g) for g in penalties), tuple(modes), bleu, adh)


def model_config_for(vocab: Vocabulary, **overrides) -> ModelConfig:
    return ModelConfig(vocab_size=len(vocab), **overrides)


def synthetic_text(spec: SyntheticTaskSpec, n: int, sample_seed: Optional[int] = None) -> list[tuple[list[str], list[str]]]:
    """``n`` examples as token strings; symbols come from ``spec``, draws from ``sample_seed``."""
    symbols = synthetic_vocabulary(spec)
    draw = spec if sample_seed is None else replace(spec, seed=sample_seed)
    return [(symbols.decode(ex.source), symbols.decode(ex.target)) for ex in generate_synthetic(draw, n)]


def synthetic_split(spec: SyntheticTaskSpec, n: int, vocab: Optional[Vocabulary] = None,
                    sample_seed: Optional[int] = None) -> tuple[list[ParallelExample], Vocabulary]:
    """Encode a synthetic sample, building a target-side frequency vocabulary if none is given."""
    text = synthetic_text(spec, n, sample_seed)
    if vocab is None:
        vocab = build_vocabulary([tgt for _, tgt in text], max_size=spec.vocab_size)
    return [ParallelExample(tuple(vocab.encode(s)), tuple(vocab.encode(t))) for s, t in text], vocab
