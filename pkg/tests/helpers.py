"""Shared test oracles."""

from __future__ import annotations

import numpy as np
import torch

from insertion_order.model import backward, batch_loss


def finite_difference_errors(model, sources, hyps, policies, eps=1e-3) -> np.ndarray:
    """|analytic - central difference| / max(1, |analytic|) for every scalar parameter."""
    _, grads = backward(model, sources, hyps, policies)
    errors = []
    with torch.no_grad():
        for name, p in model.named_parameters():
            flat = p.view(-1)
            g = grads[name].reshape(-1)
            for i in range(flat.numel()):
                old = float(flat[i])
                flat[i] = old + eps
                up = float(batch_loss(model, sources, hyps, policies))
                flat[i] = old - eps
                down = float(batch_loss(model, sources, hyps, policies))
                flat[i] = old
                fd = (up - down) / (2 * eps)
                errors.append(abs(g[i] - fd) / max(1.0, abs(g[i])))
    return np.array(errors)


def brute_force_valid(canvas) -> set[tuple[int, int, object]]:
    """Every (content, slot, ref position) whose insertion keeps the alignment increasing."""
    from insertion_order.corpus import EOS

    out = set()
    alignment = list(canvas.alignment)
    for slot in range(canvas.n + 1):
        found = False
        for s in range(len(canvas.reference)):
            if s in alignment:
                continue
            trial = alignment[:slot] + [s] + alignment[slot:]
            if all(x < y for x, y in zip(trial, trial[1:])):
                out.add((canvas.reference[s], slot, s))
                found = True
        if not found:
            out.add((EOS, slot, None))
    return out


def brute_ngrams(tokens, n) -> dict[tuple, int]:
    """Every n-gram with its count, by explicit window comparison."""
    grams = [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]
    return {g: sum(1 for x in grams if x == g) for g in grams}


def brute_corpus_bleu(hyps, refs, max_order=4) -> tuple[float, float]:
    """Unsmoothed corpus BLEU on a 0-100 scale and the brevity penalty."""
    import math

    matches = [0] * max_order
    totals = [0] * max_order
    for h, r in zip(hyps, refs):
        for n in range(1, max_order + 1):
            hg, rg = brute_ngrams(h, n), brute_ngrams(r, n)
            matches[n - 1] += sum(min(c, rg.get(g, 0)) for g, c in hg.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    c = sum(len(h) for h in hyps)
    r = sum(len(x) for x in refs)
    bp = 1.0 if c >= r else math.exp(1 - r / c)
    if min(matches) == 0:
        return 0.0, bp
    return 100 * bp * math.exp(sum(math.log(m / t) for m, t in zip(matches, totals)) / max_order), bp
