"""Temperature-softmax oracle targets and the KL losses trained against them.

Each action gets reward ``-O(a)``; within a slot the target over contents is
``softmax(-O / tau)`` with duplicate contents merged. The location target is the
share of the pooled (all-slot) unnormalized reward mass held by each slot.
Slots whose span is already empty only compete for location mass once the whole
canvas is complete, otherwise serial decoding would learn to stop early.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .canvas import ValidActionSet
from .distributions import SlotDistributions
from .orders import OrderSpec, score_all


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class OraclePolicy:
    slots: tuple[dict[int, float], ...]         # per slot: content -> probability
    location: tuple[float, ...]                  # per slot: location target
    action_probs: tuple[tuple[float, ...], ...]  # per slot, aligned with valid.per_slot
    temperature: float

    @property
    def num_slots(self) -> int:
        return len(self.slots)

    def content_matrix(self, vocab_size: int) -> np.ndarray:
        out = np.zeros((self.num_slots, vocab_size))
        for l, dist in enumerate(self.slots):
            for c, p in dist.items():
                out[l, c] = p
        return out


@dataclass(frozen=True)
class SlotLoss:
    per_slot: tuple[float, ...]
    location: float

    @property
    def sequence(self) -> float:
        return float(np.mean(self.per_slot))

    @property
    def total(self) -> float:
        return self.sequence + self.location


def _softmax_neg(scores: list[float], tau: float) -> list[float]:
    z = [-s / tau for s in scores]
    top = max(z)
    e = [math.exp(v - top) for v in z]
    tot = sum(e)
    return [v / tot for v in e]


def build_policy(order: OrderSpec, valid: ValidActionSet, tau: float, posterior=None) -> OraclePolicy:
    if not tau > 0:
        raise OracleError(f"temperature must be positive, got {tau}")
    scores = score_all(order, valid, posterior)

    slots = []
    action_probs = []
    for row, acts in zip(scores, valid.per_slot):
        probs = _softmax_neg(row, tau)
        merged: dict[int, float] = {}
        for p, a in zip(probs, acts):
            merged[a.content] = merged.get(a.content, 0.0) + p
        slots.append(merged)
        action_probs.append(tuple(probs))

    # pooled location target, in log space to survive tiny temperatures
    pooled = [(l, -s / tau) for l, (row, acts) in enumerate(zip(scores, valid.per_slot))
              for s, a in zip(row, acts) if not a.is_eos]
    if not pooled:
        pooled = [(l, 0.0) for l in range(len(scores))]
    top = max(v for _, v in pooled)
    mass = [0.0] * len(scores)
    for l, v in pooled:
        mass[l] += math.exp(v - top)
    tot = sum(mass)
    location = tuple(m / tot for m in mass)
    return OraclePolicy(tuple(slots), location, tuple(action_probs), float(tau))


def _kl(q: np.ndarray, logp: np.ndarray) -> float:
    support = q > 0
    if not np.any(support):
        return 0.0
    lp = logp[support]
    if np.any(np.isneginf(lp)):
        return math.inf
    qs = q[support]
    return float(np.sum(qs * (np.log(qs) - lp)))


def slot_kl(policy: OraclePolicy, model_out: SlotDistributions) -> SlotLoss:
    if model_out.num_slots != policy.num_slots:
        raise OracleError(f"model gives {model_out.num_slots} slots, oracle has {policy.num_slots}")
    q = policy.content_matrix(model_out.content_logp.shape[1])
    per_slot = tuple(_kl(q[l], model_out.content_logp[l]) for l in range(policy.num_slots))
    location = _kl(np.asarray(policy.location), model_out.location_logp)
    return SlotLoss(per_slot, location)


@dataclass(frozen=True)
class TemperatureDiagnostic:
    one_hot_mass: float      # smallest per-slot argmin mass at the low temperature
    uniform_deviation: float  # largest deviation from uniform at the high temperature
    one_hot_ok: bool
    uniform_ok: bool

    @property
    def ok(self) -> bool:
        return self.one_hot_ok and self.uniform_ok


def temperature_limits_check(order: OrderSpec, valid: ValidActionSet,
                             low: float = 1e-3, high: float = 1e6,
                             posterior: Optional[np.ndarray] = None) -> TemperatureDiagnostic:
    scores = score_all(order, valid, posterior)
    cold = build_policy(order, valid, low, posterior)
    hot = build_policy(order, valid, high, posterior)
    min_mass = 1.0
    max_dev = 0.0
    for row, pc, ph in zip(scores, cold.action_probs, hot.action_probs):
        best = min(row)
        min_mass = min(min_mass, sum(p for s, p in zip(row, pc) if s == best))
        max_dev = max(max_dev, max(abs(p - 1.0 / len(ph)) for p in ph))
    return TemperatureDiagnostic(min_mass, max_dev, min_mass >= 1 - 1e-6, max_dev <= 1e-4)
