"""BLEU, order adherence and length-binned sentence BLEU."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Optional, Sequence

import numpy as np

from .canvas import Canvas, align, apply, valid_actions
from .corpus import ParallelExample
from .decoder import DecodeConfig, SlotModel, TraceStep, decode_serial, serial_step
from .orders import OrderSpec, best_moves

Tokens = Sequence[Hashable]


class EvaluationError(ValueError):
    pass


def ngram_counts(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


@dataclass(frozen=True)
class BleuReport:
    bleu: float
    precisions: tuple[float, ...]
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    sentence_bleu: tuple[float, ...] = field(default=())

    def as_record(self) -> str:
        prec = ",".join(f"{p:.4f}" for p in self.precisions)
        return f"bleu={self.bleu:.4f} bp={self.brevity_penalty:.6f} precisions={prec} hyp_len={self.hyp_len} ref_len={self.ref_len}"


def _stats(hyp: Tokens, ref: Tokens, max_order: int):
    matches, totals = [], []
    for n in range(1, max_order + 1):
        h, r = ngram_counts(hyp, n), ngram_counts(ref, n)
        matches.append(sum(min(c, r[g]) for g, c in h.items()))
        totals.append(max(len(hyp) - n + 1, 0))
    return matches, totals


def _brevity(c: int, r: int) -> float:
    if c == 0:
        return 0.0
    return 1.0 if c >= r else math.exp(1.0 - r / c)


def _combine(matches, totals, c, r, smooth: bool) -> tuple[float, list[float], float]:
    """BLEU in [0, 100].

    Unsmoothed: any zero precision gives 0. Smoothed (exponential, as in
    mteval): the k-th order with no matches gets precision 1 / (2^k * total);
    orders longer than the hypothesis are dropped.
    """
    bp = _brevity(c, r)
    precisions = []
    logs = []
    zeros = 0
    for m, t in zip(matches, totals):
        if t == 0:
            precisions.append(0.0)
            if not smooth:
                logs.append(-math.inf)
            continue
        if m == 0 and smooth:
            zeros += 1
            p = 1.0 / (2 ** zeros * t)
        else:
            p = m / t
        precisions.append(p)
        logs.append(math.log(p) if p > 0 else -math.inf)
    if bp == 0.0 or not logs or any(math.isinf(v) for v in logs):
        return 0.0, precisions, bp
    return 100.0 * bp * math.exp(sum(logs) / len(logs)), precisions, bp


def sentence_bleu(hypothesis: Tokens, reference: Tokens, max_order: int = 4) -> float:
    matches, totals = _stats(hypothesis, reference, max_order)
    return _combine(matches, totals, len(hypothesis), len(reference), smooth=True)[0]


def corpus_bleu(hypotheses: Sequence[Tokens], references: Sequence[Tokens], max_order: int = 4) -> BleuReport:
    if not hypotheses:
        raise EvaluationError("empty hypothesis set")
    if len(hypotheses) != len(references):
        raise EvaluationError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    matches = [0] * max_order
    totals = [0] * max_order
    c = r = 0
    for hyp, ref in zip(hypotheses, references):
        m, t = _stats(hyp, ref, max_order)
        matches = [a + b for a, b in zip(matches, m)]
        totals = [a + b for a, b in zip(totals, t)]
        c += len(hyp)
        r += len(ref)
    bleu, precisions, bp = _combine(matches, totals, c, r, smooth=False)
    sent = tuple(sentence_bleu(h, ref, max_order) for h, ref in zip(hypotheses, references))
    return BleuReport(bleu, tuple(precisions), bp, c, r, sent)


BIN_WIDTH = 5
MAX_BINNED_LEN = 50


@dataclass(frozen=True)
class LengthBin:
    low: int
    high: int
    count: int
    mean_bleu: float  # nan when the bin is empty


def length_binned_bleu(hypotheses: Sequence[Tokens], references: Sequence[Tokens],
                       sources: Sequence[Tokens]) -> list[LengthBin]:
    if not len(hypotheses) == len(references) == len(sources):
        raise EvaluationError("hypotheses, references and sources must align")
    scores: dict[int, list[float]] = {b: [] for b in range(MAX_BINNED_LEN // BIN_WIDTH)}
    for hyp, ref, src in zip(hypotheses, references, sources):
        if not 1 <= len(src) <= MAX_BINNED_LEN:
            continue
        scores[(len(src) - 1) // BIN_WIDTH].append(sentence_bleu(hyp, ref))
    return [
        LengthBin(b * BIN_WIDTH + 1, (b + 1) * BIN_WIDTH, len(v), float(np.mean(v)) if v else math.nan)
        for b, v in scores.items()
    ]


@dataclass(frozen=True)
class AdherenceReport:
    total: int
    adherent: int

    @property
    def percentage(self) -> float:
        return 100.0 * self.adherent / self.total if self.total else 0.0

    def __add__(self, other: "AdherenceReport") -> "AdherenceReport":
        return AdherenceReport(self.total + other.total, self.adherent + other.adherent)

    def as_record(self) -> str:
        return f"adherence={self.percentage:.4f} adherent={self.adherent} total={self.total}"


def step_adherent(order: OrderSpec, before: Sequence[int], reference: Sequence[int],
                  move: tuple[int, int], posterior=None) -> bool:
    """Whether a (content, location) move on ``before`` lies in the order's best set.

    A hypothesis that no longer embeds in the reference makes the move non-adherent.
    """
    alignment = align(before, reference, "left")
    if alignment is None:
        return False
    valid = valid_actions(Canvas(tuple(before), tuple(reference), alignment))
    return move in best_moves(order, valid, posterior)


def trace_adherence(order: OrderSpec, steps: Sequence[TraceStep], reference: Sequence[int],
                    posteriors: Optional[Sequence] = None) -> AdherenceReport:
    """Count every decode step, including the terminating EOS step, as one decision."""
    adherent = 0
    for i, step in enumerate(steps):
        action = step.actions[0]
        post = posteriors[i] if posteriors is not None else None
        adherent += step_adherent(order, step.before, reference, (action.content, action.location), post)
    return AdherenceReport(len(steps), adherent)


def adherence(model: SlotModel, order: OrderSpec, examples: Sequence[ParallelExample],
              cfg: DecodeConfig = DecodeConfig(), forced: bool = False) -> AdherenceReport:
    """Share of serial decode decisions that follow ``order``.

    Free mode keeps the model's own insertion even when it diverges from the
    reference. Forced mode scores the model's choice but then applies its best
    move among the valid ones, so the canvas always stays on the reference.
    """
    if cfg.mode != "serial":
        cfg = DecodeConfig("serial", cfg.eos_penalty, cfg.max_steps, cfg.max_len)
    report = AdherenceReport(0, 0)
    for ex in examples:
        if forced:
            report = report + _forced_adherence(model, order, ex, cfg)
            continue
        _, trace = decode_serial(model, ex.source, cfg)
        posteriors = None
        if order.adaptive:
            prepared = model.prepare(ex.source)
            posteriors = [model.slot_distributions(prepared, s.before).joint_logp() for s in trace.steps]
        report = report + trace_adherence(order, trace.steps, ex.target, posteriors)
    return report


def _forced_adherence(model: SlotModel, order: OrderSpec, ex: ParallelExample, cfg: DecodeConfig) -> AdherenceReport:
    _, max_steps = cfg.limits(len(ex.source))
    prepared = model.prepare(ex.source)
    canvas = Canvas((), tuple(ex.target), ())
    total = adherent = 0
    for _ in range(max_steps):
        dist = model.slot_distributions(prepared, canvas.hypothesis)
        joint = dist.joint_logp()
        choice = serial_step(dist, cfg.eos_penalty)
        valid = valid_actions(canvas)
        best = best_moves(order, valid, joint if order.adaptive else None)
        total += 1
        adherent += (choice.content, choice.location) in best
        if valid.complete:
            break
        candidates = [a for a in valid if not a.is_eos]
        pick = max(candidates, key=lambda a: (joint[a.location, a.content], -a.location, -a.target_pos))
        canvas = apply(canvas, [pick])
    return AdherenceReport(total, adherent)


def exact_match(hypotheses: Sequence[Sequence[int]], references: Sequence[Sequence[int]]) -> float:
    if not hypotheses:
        raise EvaluationError("empty hypothesis set")
    return 100.0 * sum(tuple(h) == tuple(r) for h, r in zip(hypotheses, references)) / len(hypotheses)
