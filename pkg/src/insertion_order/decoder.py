"""Greedy serial and parallel insertion decoding.

A decodable model exposes ``prepare(source)`` (run once per sentence) and
``slot_distributions(prepared, hypothesis) -> SlotDistributions``. An optional
``max_output_len`` attribute caps the output length on top of the config.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np

from .canvas import Canvas, InsertionAction, apply
from .corpus import EOS, Vocabulary
from .distributions import SlotDistributions

FINISHED, MAX_STEPS, MAX_LEN = "finished", "max_steps", "max_len"


class SlotModel(Protocol):
    def prepare(self, source: Sequence[int]): ...

    def slot_distributions(self, prepared, hypothesis: Sequence[int]) -> SlotDistributions: ...


@dataclass(frozen=True)
class DecodeConfig:
    mode: str = "serial"
    eos_penalty: float = 0.0
    max_steps: Optional[int] = None
    max_len: Optional[int] = None

    def __post_init__(self) -> None:
        if self.mode not in ("serial", "parallel"):
            raise ValueError(f"mode must be 'serial' or 'parallel', got {self.mode!r}")
        if self.eos_penalty < 0:
            raise ValueError("eos_penalty must be >= 0")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.max_len is not None and self.max_len < 1:
            raise ValueError("max_len must be >= 1")

    def limits(self, source_len: int) -> tuple[int, int]:
        max_len = self.max_len if self.max_len is not None else 2 * source_len + 16
        if self.max_steps is not None:
            return max_len, self.max_steps
        if self.mode == "serial":
            return max_len, max_len + 8
        return max_len, math.ceil(math.log2(max(max_len, 2))) + 8


@dataclass(frozen=True)
class TraceStep:
    before: tuple[int, ...]
    actions: tuple[InsertionAction, ...]  # EOS actions mark finished slots
    after: tuple[int, ...]

    @property
    def insertions(self) -> tuple[InsertionAction, ...]:
        return tuple(a for a in self.actions if not a.is_eos)


@dataclass
class DecodeTrace:
    steps: list[TraceStep] = field(default_factory=list)
    status: str = FINISHED

    @property
    def output(self) -> tuple[int, ...]:
        return self.steps[-1].after if self.steps else ()


def penalized(content_logp: np.ndarray, eos_penalty: float) -> np.ndarray:
    out = np.array(content_logp, dtype=np.float64)
    out[:, EOS] -= eos_penalty
    return out


def serial_step(dist: SlotDistributions, eos_penalty: float) -> InsertionAction:
    """Joint argmax over (content, location); ties go to the lowest slot, then lowest id."""
    joint = penalized(dist.content_logp, eos_penalty) + dist.location_logp[:, None]
    loc, content = np.unravel_index(int(np.argmax(joint)), joint.shape)
    return InsertionAction(int(content), int(loc))


def parallel_step(dist: SlotDistributions, eos_penalty: float) -> list[InsertionAction]:
    best = np.argmax(penalized(dist.content_logp, eos_penalty), axis=1)
    return [InsertionAction(int(c), l) for l, c in enumerate(best)]


def _limits(model, source: Sequence[int], cfg: DecodeConfig) -> tuple[int, int]:
    max_len, max_steps = cfg.limits(len(source))
    cap = getattr(model, "max_output_len", None)
    return (max_len if cap is None else min(max_len, cap)), max_steps


def decode_serial(model: SlotModel, source: Sequence[int], cfg: DecodeConfig = DecodeConfig()):
    max_len, max_steps = _limits(model, source, cfg)
    prepared = model.prepare(source)
    canvas = Canvas(())
    trace = DecodeTrace(status=MAX_STEPS)
    for _ in range(max_steps):
        action = serial_step(model.slot_distributions(prepared, canvas.hypothesis), cfg.eos_penalty)
        if action.is_eos:
            trace.steps.append(TraceStep(canvas.hypothesis, (action,), canvas.hypothesis))
            trace.status = FINISHED
            break
        if canvas.n >= max_len:
            trace.status = MAX_LEN
            break
        new = apply(canvas, [action])
        trace.steps.append(TraceStep(canvas.hypothesis, (action,), new.hypothesis))
        canvas = new
    return canvas.hypothesis, trace


def decode_parallel(model: SlotModel, source: Sequence[int], cfg: DecodeConfig = DecodeConfig(mode="parallel")):
    max_len, max_steps = _limits(model, source, cfg)
    prepared = model.prepare(source)
    canvas = Canvas(())
    trace = DecodeTrace(status=MAX_STEPS)
    for _ in range(max_steps):
        actions = parallel_step(model.slot_distributions(prepared, canvas.hypothesis), cfg.eos_penalty)
        inserts = [a for a in actions if not a.is_eos]
        if not inserts:
            trace.steps.append(TraceStep(canvas.hypothesis, tuple(actions), canvas.hypothesis))
            trace.status = FINISHED
            break
        if canvas.n + len(inserts) > max_len:
            trace.status = MAX_LEN
            break
        new = apply(canvas, actions)
        trace.steps.append(TraceStep(canvas.hypothesis, tuple(actions), new.hypothesis))
        canvas = new
    return canvas.hypothesis, trace


def decode(model: SlotModel, source: Sequence[int], cfg: DecodeConfig):
    if cfg.mode == "serial":
        return decode_serial(model, source, cfg)
    return decode_parallel(model, source, cfg)


def _bracketed(step: TraceStep, vocab: Optional[Vocabulary]) -> str:
    name = (lambda t: vocab.token(t)) if vocab is not None else str
    inserted = {a.location for a in step.insertions}
    words = []
    for slot in range(len(step.before) + 1):
        if slot in inserted:
            content = next(a.content for a in step.insertions if a.location == slot)
            words.append(f"[{name(content)}]")
        if slot < len(step.before):
            words.append(name(step.before[slot]))
    return " ".join(words)


def render_trace(trace: DecodeTrace, vocab: Optional[Vocabulary] = None) -> str:
    """One line per step: ``<step>\\tk=<insertions>\\t<hypothesis after the step>``.

    Tokens inserted at that step are wrapped in square brackets; the terminating
    step (no insertions) shows the final hypothesis unbracketed. A last
    ``status\\t<status>`` line closes the trace.
    """
    lines = [f"{i}\tk={len(step.insertions)}\t{_bracketed(step, vocab)}" for i, step in enumerate(trace.steps)]
    lines.append(f"status\t{trace.status}")
    return "\n".join(lines) + "\n"
