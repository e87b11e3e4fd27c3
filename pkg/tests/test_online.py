import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stepwise.online import (
    FrameBuffer,
    ProgressTracker,
    StreamingTcn,
    apply_ordering_penalty,
    finalize_probabilities,
    infer_current,
)
from stepwise.tasks import TaskDefinition
from stepwise.tcn import CausalTcnModel, model_forward


def test_buffer_evicts_oldest():
    buf = FrameBuffer(dim=1, capacity=3)
    for v in range(1, 6):
        buf.push([float(v)])
    assert buf.window()[:, 0].tolist() == [3.0, 4.0, 5.0]
    assert list(buf.indices) == [2, 3, 4]


def test_buffer_single_push():
    buf = FrameBuffer(dim=2)
    buf.push([1.0, 2.0])
    assert len(buf) == 1


def test_buffer_long_stream():
    buf = FrameBuffer(dim=1, capacity=1200)
    for v in range(10_000):
        buf.push([v])
    assert len(buf) == 1200
    assert buf.oldest_index + 1 == 8801  # 1-based frame number
    assert buf.window()[0, 0] == 8800


def test_buffer_rejects_wrong_width():
    buf = FrameBuffer(dim=3)
    with pytest.raises(ValueError):
        buf.push([1.0, 2.0])
    with pytest.raises(ValueError):
        buf.push([1.0, np.nan, 2.0])


def _model():
    return CausalTcnModel.init(4, 5, 2, 3, 6, seed=11)


def test_infer_current_full_history_matches_offline():
    m = _model()
    x = np.random.default_rng(0).normal(size=(40, 4))
    buf = FrameBuffer(4, capacity=100)
    for f in x:
        buf.push(f)
    np.testing.assert_array_equal(infer_current(buf, m), model_forward(x, m)[-1].logits[-1])


def test_infer_current_short_buffer_defined():
    m = _model()
    buf = FrameBuffer(4, capacity=5)
    for f in np.random.default_rng(1).normal(size=(20, 4)):
        buf.push(f)
    z = infer_current(buf, m)
    assert z.shape == (5,) and np.all(np.isfinite(z))
    np.testing.assert_array_equal(z, model_forward(buf.window(), m)[-1].logits[-1])


def test_infer_current_errors():
    m = _model()
    with pytest.raises(ValueError):
        infer_current(FrameBuffer(4), m)
    buf = FrameBuffer(3)
    buf.push([1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        infer_current(buf, m)


def test_streaming_500_frames_bit_exact():
    m = _model()
    x = np.random.default_rng(2).normal(size=(500, 4))
    stream = StreamingTcn(m, capacity=m.receptive_field)
    assert stream.incremental
    online = np.array([stream.push(f) for f in x])
    assert np.array_equal(online, model_forward(x, m)[-1].logits)


def test_streaming_small_buffer_equals_windowed_forward():
    m = _model()
    x = np.random.default_rng(3).normal(size=(60, 4))
    stream = StreamingTcn(m, capacity=9)
    assert not stream.incremental
    for t, f in enumerate(x):
        z = stream.push(f)
        window = x[max(0, t - 8) : t + 1]
        np.testing.assert_array_equal(z, model_forward(window, m)[-1].logits[-1])


TASK5 = TaskDefinition("T", 5)


def test_penalty_zero_when_order_respected():
    tr = ProgressTracker(5, alpha=2.0)
    tr.sync([1, 2])
    z = np.arange(6, dtype=float)
    assert apply_ordering_penalty(z, tr, TASK5)[3] == z[3]


def test_penalty_at_start():
    tr = ProgressTracker(5, alpha=1.5)
    z = np.zeros(6)
    out = apply_ordering_penalty(z, tr, TASK5)
    assert out[3] == -2 * 1.5
    assert out.tolist() == [0.0, 0.0, -1.5, -3.0, -4.5, -6.0]


def test_penalty_all_done():
    tr = ProgressTracker(5, alpha=1.0)
    tr.sync(range(1, 6))
    out = apply_ordering_penalty(np.zeros(6), tr, TASK5)
    assert out.tolist() == [0.0, -4.0, -3.0, -2.0, -1.0, 0.0]


def test_penalty_uses_canonical_order():
    task = TaskDefinition("P", 3, order=(2, 3, 1))
    tr = ProgressTracker(3, alpha=1.0)
    out = apply_ordering_penalty(np.zeros(4), tr, task)
    assert out.tolist() == [0.0, -2.0, 0.0, -1.0]


def _brute_penalty(z, done, order, alpha):
    out = z.copy()
    for i, a in enumerate(order):
        pre = sum(1 - done[b] for b in order[:i])
        suc = sum(done[b] for b in order[i + 1 :])
        out[a] = z[a] - alpha * (pre + suc)
    return out


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 7), st.data())
def test_penalty_properties(n, data):
    order = tuple(data.draw(st.permutations(range(1, n + 1))))
    task = TaskDefinition("H", n, order)
    alpha = data.draw(st.floats(0.01, 50))
    done_list = data.draw(st.lists(st.booleans(), min_size=n, max_size=n))
    z = np.array(data.draw(st.lists(st.floats(-20, 20), min_size=n + 1, max_size=n + 1)))
    tr = ProgressTracker(n, alpha)
    tr.sync([k + 1 for k, d in enumerate(done_list) if d])
    out = apply_ordering_penalty(z, tr, task)
    np.testing.assert_allclose(out, _brute_penalty(z, tr.done.astype(int), order, alpha), atol=1e-9)
    assert np.all(out <= z)
    assert out[0] == z[0]
    for i, a in enumerate(order):
        free = all(tr.done[b] for b in order[:i]) and not any(tr.done[b] for b in order[i + 1 :])
        assert (out[a] == z[a]) == free


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 7), st.data())
def test_large_alpha_enforces_order(n, data):
    task = TaskDefinition("H", n)
    z = np.array(data.draw(st.lists(st.floats(-10, 10), min_size=n + 1, max_size=n + 1)))
    alpha = 1.01 * (z.max() - z.min()) + 1e-3
    done_list = data.draw(st.lists(st.booleans(), min_size=n, max_size=n))
    tr = ProgressTracker(n, alpha)
    tr.sync([k + 1 for k, d in enumerate(done_list) if d])
    out = apply_ordering_penalty(z, tr, task)
    allowed = [
        a for i, a in enumerate(task.order)
        if all(tr.done[b] for b in task.order[:i]) and not any(tr.done[b] for b in task.order[i + 1 :])
    ]
    if allowed:
        assert int(np.argmax(out[1:])) + 1 in allowed


def test_tracker_flags_never_reset():
    tr = ProgressTracker(4)
    tr.mark_done(2)
    tr.sync([])
    tr.sync([3])
    assert tr.is_done(2) and tr.is_done(3)
    with pytest.raises(ValueError):
        ProgressTracker(3, alpha=0)


def test_softmax_equal_logits_uniform():
    np.testing.assert_allclose(finalize_probabilities(np.full(4, 2.5)), 0.25, atol=1e-15)


def test_softmax_dominant_logit():
    p = finalize_probabilities(np.array([0.0, 50.0, 0.0]))
    assert abs(p[1] - 1.0) < 1e-9


def test_softmax_closed_form():
    p = finalize_probabilities(np.array([0.0, math.log(2), math.log(4)]))
    np.testing.assert_allclose(p, [1 / 7, 2 / 7, 4 / 7], atol=1e-15)
    assert abs(p.sum() - 1) < 1e-9
