"""
Tests for warm-start parameter prediction
"""
import pytest
import torch

from engine.warmstart import InitKind, ParamHistory, predict_init, push


def test_empty_history_is_fresh():
    init = predict_init(ParamHistory())
    assert init.kind is InitKind.FRESH
    assert init.params is None


def test_one_entry_is_copy():
    history = ParamHistory()
    p = torch.tensor([0.2, 0.4])
    push(history, 0, p)

    init = predict_init(history)

    assert init.kind is InitKind.COPY
    assert torch.equal(init.params, p)


def test_linear_extrapolation():
    history = ParamHistory()
    push(history, 0, torch.tensor([0.5]))
    push(history, 1, torch.tensor([1.0]))

    init = predict_init(history)

    assert init.kind is InitKind.PREDICTED
    assert torch.allclose(init.params, torch.tensor([1.5]))


def test_constant_history_predicts_itself():
    history = ParamHistory()
    p = torch.tensor([0.1, -0.3, 2.0], dtype=torch.float64)
    push(history, 3, p)
    push(history, 4, p)
    assert torch.equal(predict_init(history).params, p)


def test_capacity_keeps_last_two():
    history = ParamHistory()
    for idx in range(3):
        push(history, idx, torch.full((2,), float(idx)))

    assert len(history) == 2
    assert history.block_indices == [1, 2]


def test_out_of_order_push():
    history = ParamHistory()
    push(history, 1, torch.zeros(2))
    with pytest.raises(ValueError):
        push(history, 0, torch.zeros(2))


def test_length_mismatch():
    history = ParamHistory()
    push(history, 0, torch.zeros(2))
    with pytest.raises(ValueError):
        push(history, 1, torch.zeros(3))


def test_history_stores_copies():
    history = ParamHistory()
    p = torch.zeros(2)
    push(history, 0, p)
    p += 1.0
    assert torch.equal(history.entries[-1][1], torch.zeros(2))
