"""Order functions: score each valid insertion, lower is better."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from .canvas import InsertionAction, ValidActionSet
from .corpus import Vocabulary

ORDER_KINDS = (
    "uniform", "binary_tree", "random", "l2r", "r2l",
    "common_first", "rare_first", "shortest_first", "longest_first",
    "alpha_az", "alpha_za", "easy_first", "hard_first",
)
ADAPTIVE_KINDS = frozenset({"easy_first", "hard_first"})

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3


def fnv1a_64(text: str) -> int:
    h = FNV64_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * FNV64_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


# kind -> (rank key over the token string and vocabulary, sign)
_RANKED: dict[str, tuple[Callable[[str, Vocabulary], object], int]] = {
    "random": (lambda w, v: fnv1a_64(w), 1),
    "common_first": (lambda w, v: -v.freq(w), 1),
    "rare_first": (lambda w, v: -v.freq(w), -1),
    "shortest_first": (lambda w, v: len(w), 1),
    "longest_first": (lambda w, v: len(w), -1),
    "alpha_az": (lambda w, v: w, 1),
    "alpha_za": (lambda w, v: w, -1),
}


class OrderError(ValueError):
    pass


@dataclass(frozen=True)
class OrderSpec:
    kind: str
    vocab: Optional[Vocabulary] = None

    def __post_init__(self) -> None:
        if self.kind not in ORDER_KINDS:
            raise OrderError(f"unknown order kind {self.kind!r}; valid kinds: {', '.join(ORDER_KINDS)}")
        if self.kind in _RANKED and self.vocab is None:
            raise OrderError(f"order {self.kind!r} needs a vocabulary")

    @property
    def adaptive(self) -> bool:
        return self.kind in ADAPTIVE_KINDS


def dense_ranks(keys: dict[int, object]) -> dict[int, int]:
    """Rank distinct key values from 0 upward; equal keys share a rank."""
    order = sorted(set(keys.values()))
    position = {k: r for r, k in enumerate(order)}
    return {tok: position[k] for tok, k in keys.items()}


def score_all(spec: OrderSpec, valid: ValidActionSet, posterior=None) -> list[list[float]]:
    """Scores for every action of ``valid``, laid out like ``valid.per_slot``.

    ``posterior`` is indexed ``posterior[location][content]`` and holds joint
    log-probabilities; it is required for the adaptive kinds only.
    """
    kind = spec.kind
    if kind in ADAPTIVE_KINDS and posterior is None:
        raise OrderError(f"adaptive order {kind!r} needs the model posterior")

    ranks: dict[int, int] = {}
    sign = 1
    if kind in _RANKED:
        key_fn, sign = _RANKED[kind]
        words = {a.content for a in valid if not a.is_eos}
        ranks = dense_ranks({c: key_fn(spec.vocab.token(c), spec.vocab) for c in words})

    out: list[list[float]] = []
    for slot_actions, span in zip(valid.per_slot, valid.spans):
        mid = (span.start + span.end - 1) / 2.0
        row = []
        for a in slot_actions:
            if a.is_eos or kind == "uniform":
                row.append(0.0)
            elif kind == "binary_tree":
                row.append(abs(a.target_pos - mid))
            elif kind == "l2r":
                row.append(float(a.target_pos))
            elif kind == "r2l":
                row.append(-float(a.target_pos))
            elif kind == "easy_first":
                row.append(-float(posterior[a.location][a.content]))
            elif kind == "hard_first":
                row.append(float(posterior[a.location][a.content]))
            else:
                row.append(float(sign * ranks[a.content]))
        out.append(row)
    return out


def score(spec: OrderSpec, action: InsertionAction, valid: ValidActionSet, posterior=None) -> float:
    """Order score of one action; ranks are taken over the words of the whole valid set."""
    scores = score_all(spec, valid, posterior)
    for row, slot_actions in zip(scores, valid.per_slot):
        for s, a in zip(row, slot_actions):
            if a == action:
                return s
    raise OrderError(f"{action} is not a valid action")


def best_actions(spec: OrderSpec, valid: ValidActionSet, posterior=None, tol: float = 1e-9) -> set[InsertionAction]:
    """Argmin tie set over the valid insertions.

    EOS competes only when the canvas is complete, i.e. when nothing else is valid.
    """
    scores = score_all(spec, valid, posterior)
    pairs = [(s, a) for row, acts in zip(scores, valid.per_slot) for s, a in zip(row, acts)]
    words = [(s, a) for s, a in pairs if not a.is_eos]
    pool = words or pairs
    low = min(s for s, _ in pool)
    return {a for s, a in pool if s <= low + tol}


def best_moves(spec: OrderSpec, valid: ValidActionSet, posterior=None) -> set[tuple[int, int]]:
    """``best_actions`` projected to (content, location) pairs, as the model sees them."""
    return {(a.content, a.location) for a in best_actions(spec, valid, posterior)}

