import itertools

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from insertion_order.canvas import aligned_canvas, valid_actions
from insertion_order.decoder import DecodeConfig, decode
from insertion_order.model import (
    InsertionTransformer,
    ModelConfig,
    ModelError,
    backward,
    batch_loss,
    init,
    load_checkpoint,
    policy_targets,
    save_checkpoint,
    sequence_losses,
)
from insertion_order.oracle import build_policy
from insertion_order.orders import OrderSpec

from helpers import finite_difference_errors

V = 16


def small(**kw):
    base = dict(vocab_size=V, d_model=16, n_layers=2, n_heads=2, d_ffn=32, max_len=20, dropout_rate=0.0, seed=0)
    base.update(kw)
    return InsertionTransformer(ModelConfig(**base)).eval()


def test_config_invariants():
    with pytest.raises(ModelError):
        ModelConfig(vocab_size=V, d_model=10, n_heads=3)
    with pytest.raises(ModelError):
        ModelConfig(vocab_size=V, n_layers=0)


def test_slot_counts():
    model = small()
    assert model.distributions([5, 6], []).content_logp.shape == (1, V)
    seen = {}

    def grab(module, inputs, output):
        seen["shape"] = tuple(output.shape)

    hook = model.dec_norm.register_forward_hook(grab)
    d = model.distributions([5, 6], [7, 8, 9])
    hook.remove()
    assert d.num_slots == 4 and seen["shape"][1] == 5
    # decoder input <start> ate snack <end>
    assert model.distributions([5], [12, 14]).num_slots == 3


def test_bad_token_id():
    with pytest.raises(ModelError, match="outside vocabulary"):
        small().distributions([5], [V])


def test_init_determinism_and_conventions():
    a, b = small(seed=3), small(seed=3)
    for (n, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
        assert torch.equal(p, q), n
    c = small(seed=4)
    assert any(not torch.equal(p, q) for p, q in zip(a.parameters(), c.parameters()))
    for name, p in a.named_parameters():
        assert torch.isfinite(p).all()
        if "norm" in name:
            assert torch.all(p == (1.0 if name.endswith("weight") else 0.0)), name
        elif name.endswith("bias"):
            assert torch.all(p == 0), name
    assert init(ModelConfig(vocab_size=V, seed=1)).config.seed == 1


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(5, V - 1), min_size=1, max_size=6), st.lists(st.integers(5, V - 1), max_size=8))
def test_forward_normalized(source, hyp):
    small().distributions(source, hyp).check_normalized(atol=1e-5)


def test_forward_deterministic_without_dropout():
    model = small(dropout_rate=0.3)
    a = model.distributions([5, 6, 7], [8, 9])
    b = model.distributions([5, 6, 7], [8, 9])
    assert np.array_equal(a.content_logp, b.content_logp)


def test_batched_matches_single():
    model = small()
    c, l, mask = model([[5, 6], [7, 8, 9, 10]], [[11], [12, 13, 14]])
    single = model.distributions([5, 6], [11])
    assert np.allclose(c[0, :2].double().detach().numpy(), single.content_logp, atol=1e-5)
    assert np.allclose(l[0, :2].double().detach().numpy(), single.location_logp, atol=1e-5)
    assert mask.tolist() == [[True, True, False, False], [True] * 4]


def test_permutation_equivariance_without_positions():
    model = small()
    model.use_positions = False
    hyp = [7, 8, 9, 10, 11]
    with torch.no_grad():
        enc = model.encode([[5, 6, 7]])
        base, _ = model.decoder_states(enc, [hyp])
        for perm in itertools.islice(itertools.permutations(range(5)), 1, 30):
            permuted = [hyp[i] for i in perm]
            out, _ = model.decoder_states(enc, [permuted])
            for new, old in enumerate(perm):
                assert torch.allclose(out[0, 1 + new], base[0, 1 + old], atol=1e-5)
            assert torch.allclose(out[0, 0], base[0, 0], atol=1e-5)
            assert torch.allclose(out[0, -1], base[0, -1], atol=1e-5)


def test_positions_break_equivariance():
    model = small()
    with torch.no_grad():
        enc = model.encode([[5, 6, 7]])
        a, _ = model.decoder_states(enc, [[7, 8]])
        b, _ = model.decoder_states(enc, [[8, 7]])
    assert not torch.allclose(a[0, 1], b[0, 2], atol=1e-4)


def _fig_policy(ref, hyp, order="l2r", tau=1.0):
    return build_policy(OrderSpec(order), valid_actions(aligned_canvas(hyp, ref)), tau)


def test_uniform_logits_gradient_is_p_minus_q():
    ref, hyp = (5, 6, 7, 8), (6,)
    pol = _fig_policy(ref, hyp, "uniform")
    logits = torch.zeros((1, 2, V), dtype=torch.float64, requires_grad=True)
    loc = torch.zeros((1, 2), dtype=torch.float64, requires_grad=True)
    qc, ql = policy_targets([pol], V, torch.float64)
    mask = torch.ones((1, 2), dtype=torch.bool)
    loss = sequence_losses(torch.log_softmax(logits, -1), torch.log_softmax(loc, -1), mask, qc, ql)
    loss.sum().backward()
    p = torch.full((V,), 1 / V, dtype=torch.float64)
    for l in range(2):
        # content term averages over the two slots
        assert torch.allclose(logits.grad[0, l], (p - qc[0, l]) / 2, atol=1e-12)
    assert torch.allclose(loc.grad[0], torch.full((2,), 0.5, dtype=torch.float64) - ql[0], atol=1e-12)


def test_zero_output_matrix_gives_uniform_p():
    model = small()
    with torch.no_grad():
        model.tgt_embed.weight.zero_()
    d = model.distributions([5, 6], [7])
    assert np.allclose(np.exp(d.content_logp), 1 / V)


def test_gradient_vanishes_at_matching_logits():
    pol = _fig_policy((5, 6, 7), (6,), "l2r", 1.0)
    qc, ql = policy_targets([pol], V, torch.float64)
    with np.errstate(divide="ignore"):
        logits = torch.tensor(np.log(np.maximum(qc.numpy(), 1e-300)), requires_grad=True)
        loc = torch.tensor(np.log(ql.numpy()), requires_grad=True)
    mask = torch.ones((1, 2), dtype=torch.bool)
    loss = sequence_losses(torch.log_softmax(logits, -1), torch.log_softmax(loc, -1), mask, qc, ql)
    assert float(loss.detach()) == pytest.approx(0.0, abs=1e-12)
    loss.sum().backward()
    assert torch.allclose(logits.grad[qc > 0], torch.zeros((), dtype=torch.float64), atol=1e-12)
    assert torch.allclose(loc.grad, torch.zeros((), dtype=torch.float64), atol=1e-12)


def test_non_finite_loss_names_example():
    model = small()
    pol_ok = _fig_policy((7, 8), ())
    pol_bad = _fig_policy((5, 6), ())
    with torch.no_grad():
        model.content_bias[5] = -float("inf")
        model.content_bias[6] = -float("inf")
    assert np.isfinite(float(batch_loss(model, [[5]], [[]], [pol_ok]).detach()))
    with pytest.raises(ModelError, match="example 1"):
        batch_loss(model, [[5], [5]], [[], []], [pol_ok, pol_bad])


def test_finite_difference_small_slice():
    # a quick subset; the full-parameter check lives in the acceptance suite
    torch.manual_seed(0)
    model = InsertionTransformer(ModelConfig(vocab_size=10, d_model=8, n_layers=1, n_heads=2, d_ffn=8,
                                             max_len=8, dropout_rate=0.0, seed=1)).double().eval()
    ref = (5, 6, 7, 8)
    policies = [_fig_policy(ref, (6,), "l2r"), _fig_policy(ref, (), "binary_tree")]
    errors = finite_difference_errors(model, [[5, 6], [7, 8, 9]], [[6], []], policies)
    assert errors.max() < 1e-3 and np.mean(errors < 1e-4) >= 0.99


def test_backward_leaves_training_flag():
    model = small()
    model.train()
    backward(model, [[5]], [[]], [_fig_policy((5,), ())])
    assert model.training


def test_checkpoint_roundtrip(tmp_path):
    model = small(seed=9)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    raw = path.read_bytes()
    assert raw[:5] == b"IOLAB"
    again = load_checkpoint(path)
    assert again.config == model.config
    for (n, p), (_, q) in zip(model.state_dict().items(), again.state_dict().items()):
        assert torch.equal(p, q), n
    save_checkpoint(again, tmp_path / "m2.ckpt")
    assert (tmp_path / "m2.ckpt").read_bytes() == raw
    cfg = DecodeConfig("serial", 0.0, max_len=6)
    assert decode(model, [5, 6], cfg)[0] == decode(again, [5, 6], cfg)[0]


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "x"
    path.write_bytes(b"NOPE!" + b"\0" * 20)
    with pytest.raises(ModelError, match="magic"):
        load_checkpoint(path)
