import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sriem import ndmath as nd
from sriem.dataset import make_batch
from sriem.errors import ContractError
from sriem.gradcheck import check_gradients
from sriem.model import (
    LOSS_MODES, VARIANTS, ModelConfig, check_shapes, forward, fuse, init_params, long_term_preference,
    loss, score_candidates,
)
from sriem.ndmath import Tensor


def tiny_batch(rng, n=30, rows=4, max_t=5):
    prefixes = [list(rng.integers(1, n + 1, size=int(rng.integers(1, max_t + 1)))) for _ in range(rows)]
    return make_batch(prefixes, rng.integers(1, n + 1, size=rows), max_t)


# building blocks ---------------------------------------------------------------

def test_long_term_single_item():
    e = np.array([[0.3, -1.2, 2.0]])
    np.testing.assert_array_equal(long_term_preference(Tensor([1.0]), Tensor(e)).data, e[0])


@given(st.floats(0, 1))
def test_long_term_identical_items(b):
    e = np.array([0.5, -2.0])
    z = long_term_preference(Tensor([b, 1 - b]), Tensor(np.vstack([e, e]))).data
    np.testing.assert_allclose(z, e, rtol=1e-12)


def test_long_term_hand_example():
    z = long_term_preference(Tensor([0.3, 0.7]), Tensor([[1.0, 0.0], [0.0, 1.0]])).data
    np.testing.assert_allclose(z, [0.3, 0.7])


def test_fuse_block_identities():
    rng = np.random.default_rng(0)
    d = 4
    emb = Tensor(rng.normal(size=(3, d)))
    mask = np.array([True, True, True])
    z_l = Tensor(rng.normal(size=d))
    left = Tensor(np.hstack([np.eye(d), np.zeros((d, d))]))
    right = Tensor(np.hstack([np.zeros((d, d)), np.eye(d)]))
    np.testing.assert_allclose(fuse(z_l, emb, mask, left)[0].data, z_l.data)
    np.testing.assert_allclose(fuse(z_l, emb, mask, right)[0].data, emb.data[2])


def test_fuse_hand_matvec():
    rng = np.random.default_rng(1)
    emb = rng.normal(size=(2, 3))
    z_l, W = rng.normal(size=3), rng.normal(size=(3, 6))
    cat = list(z_l) + list(emb[1])
    hand = [sum(W[r, c] * cat[c] for c in range(6)) for r in range(3)]
    z_h, _ = fuse(Tensor(z_l), Tensor(emb), [True, True], Tensor(W))
    np.testing.assert_allclose(z_h.data, hand, rtol=1e-13)


def test_fuse_empty_session():
    with pytest.raises(ContractError):
        fuse(Tensor(np.zeros(2)), Tensor(np.zeros((3, 2))), [False] * 3, Tensor(np.zeros((2, 4))))


def test_scores_orthogonal_gives_uniform():
    table = Tensor(np.vstack([np.zeros(3), np.eye(3)[:2] * [1, 1, 0]]))
    scores, probs = score_candidates(Tensor([0.0, 0.0, 1.0]), table)
    np.testing.assert_array_equal(scores.data, [0.0, 0.0])
    np.testing.assert_allclose(probs.data, [0.5, 0.5])


def test_scores_self_similarity():
    table = Tensor(np.vstack([np.zeros(4), np.eye(4)]))
    _, probs = score_candidates(Tensor(np.eye(4)[2]), table)
    assert int(np.argmax(probs.data)) == 2


def test_scores_hand_exp_normalize():
    rng = np.random.default_rng(2)
    table, z = rng.normal(size=(6, 3)), rng.normal(size=3)
    _, probs = score_candidates(Tensor(z), Tensor(table))
    dots = [sum(z[k] * table[i, k] for k in range(3)) for i in range(1, 6)]
    ex = [math.exp(v) for v in dots]
    np.testing.assert_allclose(probs.data, [v / sum(ex) for v in ex], rtol=1e-12)


def test_loss_one_hot_is_near_zero():
    n = 7
    for mode in LOSS_MODES:
        assert loss(Tensor(np.eye(n)[3]), 4, mode).item() <= n * 1e-11


def test_loss_two_items():
    assert loss(Tensor([0.5, 0.5]), 1, "bce-sum").item() == pytest.approx(2 * math.log(2), rel=1e-12)
    assert loss(Tensor([0.5, 0.5]), 1, "categorical-ce").item() == pytest.approx(math.log(2), rel=1e-12)


def test_loss_batch_mean():
    rng = np.random.default_rng(3)
    p = rng.dirichlet(np.ones(5), size=4)
    t = np.array([1, 5, 2, 2])
    per = [loss(Tensor(p[i]), t[i]).item() for i in range(4)]
    assert loss(Tensor(p), t).item() == pytest.approx(np.mean(per), rel=1e-12)


def test_loss_target_range():
    with pytest.raises(ContractError):
        loss(Tensor([0.5, 0.5]), 3)
    with pytest.raises(ContractError):
        loss(Tensor([0.5, 0.5]), 0)


# full forward ------------------------------------------------------------------

@pytest.mark.parametrize("variant", VARIANTS)
def test_single_length_one_session(variant):
    params = init_params(ModelConfig(n_items=10, d=6, l=3, variant=variant), seed=0)
    out = forward(make_batch([[4]], [2], 10), params)
    np.testing.assert_allclose(out.probs.data.sum(), 1.0)
    w = out.importance.weights.data[0]
    assert w[0] == pytest.approx(1.0) and not w[1:].any()


@pytest.mark.parametrize("variant", VARIANTS)
def test_duplicated_rows_identical(variant):
    params = init_params(ModelConfig(n_items=10, d=6, l=3, variant=variant), seed=1)
    out = forward(make_batch([[1, 2, 3], [5, 6], [1, 2, 3]], [4, 7, 4], 10), params)
    for k, v in out.row(0).items():
        assert v.tobytes() == out.row(2)[k].tobytes(), k


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(VARIANTS), st.integers(0, 2**32 - 1))
def test_shapes_and_normalization(variant, seed):
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(n_items=12, d=5, l=3, variant=variant)
    params = init_params(cfg, seed)
    check_shapes(params)
    batch = tiny_batch(rng, n=12, rows=3, max_t=6)
    out = forward(batch, params)
    assert out.z_h.shape == (3, 5) and out.probs.shape == (3, 12)
    np.testing.assert_allclose(out.probs.data.sum(axis=-1), 1.0, atol=1e-12)
    w = out.importance.weights.data
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(w[~batch.mask] == 0)
    assert np.isfinite(out.loss.item())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-50, 50))
def test_score_shift_keeps_ranking(seed, c):
    params = init_params(ModelConfig(n_items=15, d=4, l=2), seed)
    out = forward(tiny_batch(np.random.default_rng(seed), n=15, rows=2), params, with_loss=False)
    s = out.scores.data
    np.testing.assert_allclose(nd.softmax_row(Tensor(s + c)).data, out.probs.data, rtol=1e-9)
    assert (np.argmax(s + c, axis=-1) == np.argmax(out.probs.data, axis=-1)).all()


def test_sat_identical_embeddings_identical_outputs():
    params = init_params(ModelConfig(n_items=5, d=4, l=2, variant="sat"), seed=0)
    out = forward(make_batch([[3, 3, 3]], [1], 5), params)
    w = out.importance.weights.data[0, :3]
    np.testing.assert_allclose(w, 1 / 3)


def test_stamp_permutation_fixing_last_slot():
    params = init_params(ModelConfig(n_items=9, d=4, l=3, variant="stamp"), seed=2)
    params.tensors["stamp_b"].data[:] = np.random.default_rng(0).normal(size=3)
    a = forward(make_batch([[1, 2, 3, 4]], [5], 10), params).importance.weights.data[0, :4]
    b = forward(make_batch([[3, 1, 2, 4]], [5], 10), params).importance.weights.data[0, :4]
    np.testing.assert_allclose(b, a[[2, 0, 1, 3]], rtol=1e-12)


@pytest.mark.parametrize("variant", VARIANTS)
def test_pad_row_gets_zero_gradient(variant):
    params = init_params(ModelConfig(n_items=20, d=6, l=3, variant=variant), seed=0)
    batch = tiny_batch(np.random.default_rng(0), n=20, rows=6, max_t=5)
    assert not batch.mask.all()
    with nd.Tape() as tape:
        nd.backward(forward(batch, params).loss, tape)
    assert np.all(params.embeddings.grad[0] == 0)


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("loss_mode", LOSS_MODES)
def test_full_gradient_check(variant, loss_mode):
    cfg = ModelConfig(n_items=30, d=8, l=4, variant=variant, loss_mode=loss_mode)
    params = init_params(cfg, seed=3)
    if variant == "stamp":
        params.tensors["stamp_b"].data[:] = np.random.default_rng(1).uniform(-0.3, 0.3, size=4)
    batch = tiny_batch(np.random.default_rng(4))
    errs = check_gradients(lambda: forward(batch, params).loss, params.named())
    assert max(errs.values()) < 1e-4, errs


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(n_items=5, variant="gru")
    with pytest.raises(ValueError):
        ModelConfig(n_items=5, loss_mode="hinge")
    with pytest.raises(ValueError):
        ModelConfig(n_items=0)


def test_init_is_seeded_and_bounded():
    cfg = ModelConfig(n_items=10, d=16, l=4)
    a, b = init_params(cfg, 5), init_params(cfg, 5)
    for name, t in a.named():
        assert t.data.tobytes() == b.tensors[name].data.tobytes()
        assert np.all(np.abs(t.data) <= 1 / 4)
    assert not a.embeddings.data[0].any()
