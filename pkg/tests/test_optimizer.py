import math

import numpy as np
import pytest

from graphau.model import EmbeddingModel, init_model
from graphau.optimizer import AdamState, NonFiniteGradient, adam_step


def scalar_adam(grads, lr, b1=0.9, b2=0.999, eps=1e-8, p=0.0):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    return p


def _scalar_model(p=0.0):
    return EmbeddingModel(np.array([[p]]), np.array([[0.0]]), 0)


def test_zero_grad_no_change():
    m = init_model(3, 4, 2, seed=0)
    before = m.copy()
    st = AdamState.for_model(m, lr=0.1)
    adam_step(m, (np.zeros((3, 2)), np.zeros((4, 2))), st)
    np.testing.assert_array_equal(m.user_emb0, before.user_emb0)
    np.testing.assert_array_equal(m.item_emb0, before.item_emb0)


def test_single_step_matches_hand_trace():
    m = _scalar_model()
    st = AdamState.for_model(m, lr=0.1)
    adam_step(m, (np.array([[0.5]]), np.zeros((1, 1))), st)
    # bias-corrected first step: -lr * g / (|g| + eps)
    assert m.user_emb0[0, 0] == pytest.approx(-0.1 * 0.5 / (0.5 + 1e-8), rel=1e-14)


def test_multi_step_matches_scalar_trace():
    grads = [0.5, -0.2, 1.3, 0.01, -0.7]
    m = _scalar_model(0.3)
    st = AdamState.for_model(m, lr=0.05)
    for g in grads:
        adam_step(m, (np.array([[g]]), np.zeros((1, 1))), st)
    assert m.user_emb0[0, 0] == pytest.approx(scalar_adam(grads, 0.05, p=0.3), rel=1e-13)


def test_weight_decay_folds_into_gradient():
    m = _scalar_model(2.0)
    st = AdamState.for_model(m, lr=0.01, weight_decay=0.1)
    adam_step(m, (np.array([[0.5]]), np.zeros((1, 1))), st)
    assert m.user_emb0[0, 0] == pytest.approx(scalar_adam([0.5 + 0.1 * 2.0], 0.01, p=2.0), rel=1e-14)


def test_lr_zero_never_moves():
    m = init_model(3, 3, 2, seed=1)
    before = m.copy()
    st = AdamState.for_model(m, lr=0.0, weight_decay=0.01)
    rng = np.random.default_rng(0)
    for _ in range(5):
        adam_step(m, (rng.normal(size=(3, 2)), rng.normal(size=(3, 2))), st)
    np.testing.assert_array_equal(m.user_emb0, before.user_emb0)


def test_sparse_rows_untouched():
    m = init_model(4, 2, 3, seed=2)
    before = m.copy()
    st = AdamState.for_model(m, lr=0.1, weight_decay=0.01)
    g = np.zeros((4, 3))
    g[1] = [0.1, -0.2, 0.3]
    adam_step(m, (g, np.zeros((2, 3))), st)
    np.testing.assert_array_equal(m.user_emb0[[0, 2, 3]], before.user_emb0[[0, 2, 3]])
    assert not st.m[0][[0, 2, 3]].any() and not st.v[0][[0, 2, 3]].any()
    assert not np.array_equal(m.user_emb0[1], before.user_emb0[1])
    np.testing.assert_array_equal(m.item_emb0, before.item_emb0)


def test_sparse_equals_dense_reference():
    """Row-sparse update equals a dense Adam loop that skips all-zero rows."""
    rng = np.random.default_rng(3)
    m = init_model(6, 5, 3, seed=3)
    ref_p = [m.user_emb0.copy(), m.item_emb0.copy()]
    ref_m = [np.zeros_like(p) for p in ref_p]
    ref_v = [np.zeros_like(p) for p in ref_p]
    st = AdamState.for_model(m, lr=0.02, weight_decay=1e-2)
    for t in range(1, 8):
        grads = [rng.normal(size=(6, 3)), rng.normal(size=(5, 3))]
        for g in grads:
            g[rng.random(len(g)) < 0.5] = 0.0
        adam_step(m, grads, st)
        for k in range(2):
            for r in range(len(grads[k])):
                if not grads[k][r].any():
                    continue
                g = grads[k][r] + 1e-2 * ref_p[k][r]
                ref_m[k][r] = 0.9 * ref_m[k][r] + 0.1 * g
                ref_v[k][r] = 0.999 * ref_v[k][r] + 0.001 * g * g
                mh = ref_m[k][r] / (1 - 0.9**t)
                vh = ref_v[k][r] / (1 - 0.999**t)
                ref_p[k][r] = ref_p[k][r] - 0.02 * mh / (np.sqrt(vh) + 1e-8)
    np.testing.assert_allclose(m.user_emb0, ref_p[0], rtol=1e-13)
    np.testing.assert_allclose(m.item_emb0, ref_p[1], rtol=1e-13)


def test_deterministic_ten_steps():
    def run():
        m = init_model(5, 5, 4, seed=7)
        st = AdamState.for_model(m, lr=0.01)
        rng = np.random.default_rng(7)
        for _ in range(10):
            adam_step(m, (rng.normal(size=(5, 4)), rng.normal(size=(5, 4))), st)
        return m

    a, b = run(), run()
    assert a.user_emb0.tobytes() == b.user_emb0.tobytes()
    assert a.item_emb0.tobytes() == b.item_emb0.tobytes()


def test_non_finite_gradient_names_row():
    m = init_model(3, 3, 2, seed=0)
    st = AdamState.for_model(m)
    g = np.zeros((3, 2))
    g[2, 1] = np.nan
    with pytest.raises(NonFiniteGradient) as exc:
        adam_step(m, (np.zeros((3, 2)), g), st)
    assert exc.value.row == 2 and exc.value.table == "item"


def test_shape_mismatch():
    m = init_model(3, 3, 2, seed=0)
    with pytest.raises(ValueError):
        adam_step(m, (np.zeros((2, 2)), np.zeros((3, 2))), AdamState.for_model(m))
