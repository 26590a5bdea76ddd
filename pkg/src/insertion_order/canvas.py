"""Partial hypotheses, their slots, and the insertions that complete them."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Optional, Sequence

from .corpus import EOS


class CanvasError(ValueError):
    pass


@dataclass(frozen=True)
class InsertionAction:
    content: int
    location: int
    target_pos: Optional[int] = None

    @property
    def is_eos(self) -> bool:
        return self.content == EOS


@dataclass(frozen=True)
class Slot:
    index: int
    start: int  # half-open reference span [start, end)
    end: int

    @property
    def empty(self) -> bool:
        return self.start == self.end


@dataclass(frozen=True)
class Canvas:
    hypothesis: tuple[int, ...]
    reference: Optional[tuple[int, ...]] = None
    alignment: Optional[tuple[int, ...]] = None

    def __post_init__(self) -> None:
        if self.alignment is None:
            return
        if self.reference is None or len(self.alignment) != len(self.hypothesis):
            raise CanvasError("alignment needs a reference and one index per hypothesis token")
        prev = -1
        for k, pos in enumerate(self.alignment):
            if pos <= prev or pos >= len(self.reference):
                raise CanvasError("alignment must be strictly increasing within the reference")
            if self.reference[pos] != self.hypothesis[k]:
                raise CanvasError(f"hypothesis token {k} does not match reference position {pos}")
            prev = pos

    @property
    def n(self) -> int:
        return len(self.hypothesis)

    @property
    def aligned(self) -> bool:
        return self.alignment is not None

    def slots(self) -> list[Slot]:
        if self.alignment is None:
            raise CanvasError("unaligned canvas")
        bounds = (-1,) + self.alignment + (len(self.reference),)
        return [Slot(k, bounds[k] + 1, bounds[k + 1]) for k in range(self.n + 1)]


@dataclass(frozen=True)
class ValidActionSet:
    per_slot: tuple[tuple[InsertionAction, ...], ...]
    spans: tuple[Slot, ...]

    @property
    def actions(self) -> list[InsertionAction]:
        return [a for slot in self.per_slot for a in slot]

    def __len__(self) -> int:
        return sum(len(s) for s in self.per_slot)

    def __iter__(self):
        return iter(self.actions)

    @property
    def complete(self) -> bool:
        return all(s.empty for s in self.spans)


def valid_actions(canvas: Canvas) -> ValidActionSet:
    if canvas.alignment is None or canvas.reference is None:
        raise CanvasError("unaligned canvas")
    ref = canvas.reference
    per_slot = []
    spans = canvas.slots()
    for slot in spans:
        if slot.empty:
            per_slot.append((InsertionAction(EOS, slot.index, None),))
        else:
            per_slot.append(tuple(InsertionAction(ref[s], slot.index, s) for s in range(slot.start, slot.end)))
    return ValidActionSet(tuple(per_slot), tuple(spans))


def align(hypothesis: Sequence[int], reference: Sequence[int], side: str = "left") -> Optional[tuple[int, ...]]:
    """Greedy leftmost or rightmost embedding of ``hypothesis`` in ``reference``."""
    if side not in ("left", "right"):
        raise CanvasError(f"side must be 'left' or 'right', got {side!r}")
    if side == "left":
        out = []
        j = 0
        for tok in hypothesis:
            while j < len(reference) and reference[j] != tok:
                j += 1
            if j == len(reference):
                return None
            out.append(j)
            j += 1
        return tuple(out)
    out = []
    j = len(reference) - 1
    for tok in reversed(hypothesis):
        while j >= 0 and reference[j] != tok:
            j -= 1
        if j < 0:
            return None
        out.append(j)
        j -= 1
    return tuple(reversed(out))


def aligned_canvas(hypothesis: Sequence[int], reference: Sequence[int], side: str = "left") -> Canvas:
    hyp, ref = tuple(hypothesis), tuple(reference)
    return Canvas(hyp, ref, align(hyp, ref, side))


def rollin_sample(reference: Sequence[int], rng: random.Random, size: Optional[int] = None) -> Canvas:
    """Uniform roll-in: subset size uniform on 0..len(reference), then a uniform subset of that size.

    ``size`` forces the subset size.
    """
    ref = tuple(reference)
    if not ref:
        raise CanvasError("reference must be non-empty")
    k = rng.randint(0, len(ref)) if size is None else size
    idx = tuple(sorted(rng.sample(range(len(ref)), k)))
    return Canvas(tuple(ref[i] for i in idx), ref, idx)


ALIGN_SIDES = ("left", "right", "random")


def realign(canvas: Canvas, side: str, rng: Optional[random.Random] = None) -> Canvas:
    """Greedy re-alignment of a rolled-in hypothesis to its reference.

    A sampled subset of a reference with repeated tokens carries an alignment the
    model cannot see; re-aligning makes the oracle target a function of the visible
    hypothesis. ``random`` draws left or right from ``rng`` per call.
    """
    if side not in ALIGN_SIDES:
        raise CanvasError(f"side must be one of {', '.join(ALIGN_SIDES)}")
    if canvas.reference is None:
        raise CanvasError("realign needs a reference")
    if side == "random":
        side = "left" if (rng or random).random() < 0.5 else "right"
    return aligned_canvas(canvas.hypothesis, canvas.reference, side)


def apply(canvas: Canvas, actions: Sequence[InsertionAction]) -> Canvas:
    """Insert all non-EOS actions at once, indexed on the pre-insertion slots."""
    n = canvas.n
    by_slot: dict[int, InsertionAction] = {}
    for a in actions:
        if not 0 <= a.location <= n:
            raise CanvasError(f"location {a.location} outside 0..{n}")
        if a.is_eos:
            continue
        if a.location in by_slot:
            raise CanvasError(f"two insertions into slot {a.location}")
        by_slot[a.location] = a
    if not by_slot:
        return canvas

    keep_alignment = canvas.alignment is not None and all(a.target_pos is not None for a in by_slot.values())
    hyp: list[int] = []
    pos: list[int] = []
    for slot in range(n + 1):
        a = by_slot.get(slot)
        if a is not None:
            hyp.append(a.content)
            if keep_alignment:
                pos.append(a.target_pos)
        if slot < n:
            hyp.append(canvas.hypothesis[slot])
            if keep_alignment:
                pos.append(canvas.alignment[slot])
    return Canvas(tuple(hyp), canvas.reference, tuple(pos) if keep_alignment else None)
