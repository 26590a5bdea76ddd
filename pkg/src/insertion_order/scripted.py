"""Non-neural slot models: fixed scripts and oracle-perfect order followers.

Both satisfy the decoder's ``prepare`` / ``slot_distributions`` protocol and are
used to pin decode paths and adherence without training anything.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .canvas import Canvas, align, valid_actions
from .corpus import EOS
from .distributions import SlotDistributions
from .oracle import build_policy
from .orders import OrderSpec

_FLOOR = -30.0  # log-probability given to everything off-script


def _normalize(logits: np.ndarray) -> np.ndarray:
    return logits - np.logaddexp.reduce(logits, axis=-1, keepdims=True)


class ScriptedModel:
    """Plays ``script[hypothesis]``, a list of (content, location) moves.

    Slots without a scripted move predict EOS. An unknown hypothesis predicts
    EOS everywhere. Scripted moves share the location mass equally.
    """

    def __init__(self, script: Mapping[tuple[int, ...], Sequence[tuple[int, int]]], vocab_size: int) -> None:
        self.script = {tuple(k): list(v) for k, v in script.items()}
        self.vocab_size = vocab_size

    def prepare(self, source):
        return tuple(source)

    def slot_distributions(self, prepared, hypothesis) -> SlotDistributions:
        n_slots = len(hypothesis) + 1
        moves = dict((l, c) for c, l in self.script.get(tuple(hypothesis), []))
        content = np.full((n_slots, self.vocab_size), _FLOOR)
        location = np.full(n_slots, _FLOOR)
        for l in range(n_slots):
            content[l, moves.get(l, EOS)] = 0.0
            if l in moves or not moves:
                location[l] = 0.0
        return SlotDistributions(_normalize(content), _normalize(location))


class OracleModel:
    """Puts its mass on the oracle policy of ``order`` at a tiny temperature.

    ``references`` maps each source to its reference output. Hypotheses are
    re-aligned greedily from the left at every call; a hypothesis that is not a
    subsequence of the reference predicts EOS everywhere.
    """

    def __init__(self, order: OrderSpec, references: Mapping[tuple[int, ...], Sequence[int]],
                 vocab_size: int, tau: float = 1e-3) -> None:
        self.order = order
        self.references = {tuple(k): tuple(v) for k, v in references.items()}
        self.vocab_size = vocab_size
        self.tau = tau

    def prepare(self, source):
        return self.references[tuple(source)]

    def slot_distributions(self, reference, hypothesis) -> SlotDistributions:
        hyp = tuple(hypothesis)
        n_slots = len(hyp) + 1
        alignment = align(hyp, reference, "left")
        content = np.full((n_slots, self.vocab_size), _FLOOR)
        if alignment is None:
            content[:, EOS] = 0.0
            return SlotDistributions(_normalize(content), _normalize(np.zeros(n_slots)))
        policy = build_policy(self.order, valid_actions(Canvas(hyp, reference, alignment)), self.tau)
        for l, dist in enumerate(policy.slots):
            for c, q in dist.items():
                content[l, c] = max(np.log(q), _FLOOR) if q > 0 else _FLOOR
        location = np.array([max(np.log(q), _FLOOR) if q > 0 else _FLOOR for q in policy.location])
        return SlotDistributions(_normalize(content), _normalize(location))
