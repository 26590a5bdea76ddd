import itertools
import random

import pytest
from hypothesis import given, strategies as st

from insertion_order.canvas import (
    Canvas,
    CanvasError,
    InsertionAction,
    align,
    aligned_canvas,
    apply,
    realign,
    rollin_sample,
    valid_actions,
)
from insertion_order.corpus import EOS

from helpers import brute_force_valid

THE, MAN, ATE, A, SNACK = 10, 11, 12, 13, 14
FIG1_REF = (THE, MAN, ATE, A, SNACK)


def as_set(valid):
    return {(a.content, a.location, a.target_pos) for a in valid}


def test_fig1_targets():
    canvas = aligned_canvas((ATE, SNACK), FIG1_REF)
    valid = valid_actions(canvas)
    assert [[(a.content, a.target_pos) for a in slot] for slot in valid.per_slot] == [
        [(THE, 0), (MAN, 1)],
        [(A, 3)],
        [(EOS, None)],
    ]


def test_complete_canvas_is_all_eos():
    valid = valid_actions(aligned_canvas(FIG1_REF, FIG1_REF))
    assert all(len(s) == 1 and s[0].is_eos for s in valid.per_slot)
    assert len(valid.per_slot) == 6 and valid.complete


def test_duplicates_give_one_action_per_position():
    valid = valid_actions(aligned_canvas((), (7, 7, 8)))
    assert as_set(valid) == {(7, 0, 0), (7, 0, 1), (8, 0, 2)}


def test_unaligned_canvas_rejected():
    with pytest.raises(CanvasError, match="unaligned canvas"):
        valid_actions(Canvas((1, 2)))


def test_alignment_invariant_enforced():
    with pytest.raises(CanvasError):
        Canvas((1,), (1, 2), (1,))
    with pytest.raises(CanvasError):
        Canvas((1, 2), (1, 2), (1, 0))


def test_exhaustive_against_brute_force():
    vocab = (5, 6, 7)
    checked = 0
    for length in range(1, 7):
        for ref in itertools.product(vocab, repeat=length):
            for k in range(length + 1):
                for idx in itertools.combinations(range(length), k):
                    canvas = Canvas(tuple(ref[i] for i in idx), ref, idx)
                    assert as_set(valid_actions(canvas)) == brute_force_valid(canvas)
                    checked += 1
    assert checked == sum(3**n * 2**n for n in range(1, 7))


def test_align_sides():
    assert align([1], [1, 2, 1], "left") == (0,)
    assert align([1], [1, 2, 1], "right") == (2,)
    assert align([2, 1], [1, 2, 1], "left") == (1, 2)
    assert align([2, 1], [1, 2, 1], "right") == (1, 2)
    assert align([3], [1, 2]) is None
    assert align([], [1, 2]) == ()


def _all_alignments(hyp, ref):
    return [c for c in itertools.combinations(range(len(ref)), len(hyp))
            if all(ref[i] == h for i, h in zip(c, hyp))]


@given(st.lists(st.integers(0, 2), max_size=6), st.lists(st.integers(0, 2), max_size=7))
def test_align_is_extreme_embedding(hyp, ref):
    every = _all_alignments(hyp, ref)
    left, right = align(hyp, ref, "left"), align(hyp, ref, "right")
    assert (left is None) == (right is None) == (not every)
    if every:
        assert left == min(every) and right == max(every)


def test_apply_parallel_uses_pre_insertion_slots():
    canvas = Canvas((ATE,))
    out = apply(canvas, [InsertionAction(MAN, 0), InsertionAction(SNACK, 1)])
    assert out.hypothesis == (MAN, ATE, SNACK)
    out = apply(out, [InsertionAction(THE, 0), InsertionAction(EOS, 1), InsertionAction(A, 2), InsertionAction(EOS, 3)])
    assert out.hypothesis == FIG1_REF


def test_apply_first_insertion_and_noop():
    assert apply(Canvas(()), [InsertionAction(ATE, 0)]).hypothesis == (ATE,)
    canvas = aligned_canvas((ATE,), FIG1_REF)
    assert apply(canvas, []) == canvas
    assert apply(canvas, [InsertionAction(EOS, 1)]) == canvas


def test_apply_errors():
    canvas = Canvas((ATE,))
    with pytest.raises(CanvasError):
        apply(canvas, [InsertionAction(MAN, 0), InsertionAction(THE, 0)])
    with pytest.raises(CanvasError):
        apply(canvas, [InsertionAction(MAN, 2)])


def test_apply_tracks_alignment():
    canvas = aligned_canvas((ATE,), FIG1_REF)
    out = apply(canvas, [InsertionAction(MAN, 0, 1), InsertionAction(A, 1, 3)])
    assert out.alignment == (1, 2, 3)
    # unknown target position drops the alignment
    assert apply(canvas, [InsertionAction(MAN, 0)]).alignment is None


@st.composite
def aligned_canvases(draw):
    ref = tuple(draw(st.lists(st.integers(5, 8), min_size=1, max_size=9)))
    idx = tuple(sorted(draw(st.sets(st.integers(0, len(ref) - 1)))))
    return Canvas(tuple(ref[i] for i in idx), ref, idx)


@given(aligned_canvases(), st.randoms(use_true_random=False))
def test_apply_valid_actions_keeps_subsequence(canvas, rnd):
    valid = valid_actions(canvas)
    picks = [rnd.choice(slot) for slot in valid.per_slot]
    if rnd.random() < 0.5:
        picks = picks[:1]
    out = apply(canvas, picks)
    assert out.alignment is not None
    assert out.n == canvas.n + sum(not a.is_eos for a in picks)
    assert align(out.hypothesis, canvas.reference) is not None


@given(aligned_canvases())
def test_action_count_identity(canvas):
    valid = valid_actions(canvas)
    missing = len(canvas.reference) - canvas.n
    empty = sum(s.empty for s in valid.spans)
    assert len(valid) == missing + empty
    assert len(valid.per_slot) == canvas.n + 1


def test_rollin_forced_sizes():
    rng = random.Random(0)
    empty = rollin_sample(FIG1_REF, rng, size=0)
    assert empty.hypothesis == () and [(s.start, s.end) for s in empty.slots()] == [(0, 5)]
    full = rollin_sample(FIG1_REF, rng, size=5)
    assert full.hypothesis == FIG1_REF and all(s.empty for s in full.slots())


def test_rollin_keeps_exact_alignment_with_repeats():
    rng = random.Random(1)
    for _ in range(200):
        c = rollin_sample((4, 4, 4, 5), rng)
        assert c.alignment is not None and tuple(c.reference[i] for i in c.alignment) == c.hypothesis


def test_realign_sides():
    a, b = 5, 6
    sampled = Canvas((a,), (a, b, a), (2,))
    assert realign(sampled, "left").alignment == (0,)
    assert realign(sampled, "right").alignment == (2,)
    rng = random.Random(0)
    drawn = {realign(sampled, "random", rng).alignment for _ in range(50)}
    assert drawn == {(0,), (2,)}
    with pytest.raises(CanvasError):
        realign(sampled, "middle")
    with pytest.raises(CanvasError):
        realign(Canvas((a,)), "left")


def test_realigned_targets_depend_only_on_hypothesis():
    # [x] from [x, x, y] can come from either copy; left re-alignment picks one target
    x, y = 5, 6
    ref = (x, x, y)
    seen = {frozenset(as_set(valid_actions(realign(Canvas((x,), ref, (i,)), "left")))) for i in (0, 1)}
    assert len(seen) == 1
    raw = {frozenset(as_set(valid_actions(Canvas((x,), ref, (i,))))) for i in (0, 1)}
    assert len(raw) == 2


@given(st.lists(st.integers(5, 7), min_size=1, max_size=8), st.randoms(use_true_random=False),
       st.sampled_from(["left", "right"]))
def test_realign_matches_align(ref, rnd, side):
    c = realign(rollin_sample(ref, rnd), side)
    assert c.alignment == align(c.hypothesis, tuple(ref), side)


def test_rollin_rejects_empty():
    with pytest.raises(CanvasError):
        rollin_sample((), random.Random(0))
