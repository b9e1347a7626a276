"""End-to-end gradient fidelity of the training loss through the whole detector."""

import pytest
import torch

import oracles
from tthf.model import TTHF

N, C = 3, 6


@pytest.fixture(scope="module")
def setup():
    torch.manual_seed(0)
    model = TTHF("toy-conv", C).double()
    g = torch.Generator().manual_seed(1)
    prev = torch.randn(N, 3, 224, 224, generator=g, dtype=torch.float64)
    cur = torch.randn(N, 3, 224, 224, generator=g, dtype=torch.float64)
    batch = (torch.tensor([1, 0, 1]), torch.tensor([3, 11, 8]), torch.tensor([1, 2, 1]))
    return model, prev, cur, batch


def _loss_fn(model, prev, cur, batch):
    def f():
        return model.loss(prev, cur, *batch)["total"]

    return f


def _check(f, tensor, picks):
    for i in picks:
        numeric = oracles.central_difference(f, tensor, i)
        analytic = tensor.grad.view(-1)[i].item()
        assert oracles.relative_error(analytic, numeric) < 1e-4, (i, analytic, numeric)


@pytest.mark.parametrize("group", ["high_freq", "aafm", "temperature", "text"])
def test_total_loss_parameter_gradients(setup, group):
    model, prev, cur, batch = setup
    f = _loss_fn(model, prev, cur, batch)
    model.zero_grad()
    f().backward()
    module = {
        "high_freq": model.encoders.high_freq,
        "aafm": model.aafm,
        "temperature": model.temperature,
        "text": model.encoders.text,
    }[group]
    g = torch.Generator().manual_seed(7)
    for name, p in module.named_parameters():
        assert p.grad is not None, name
        picks = torch.randperm(p.numel(), generator=g)[:4].tolist()
        _check(f, p, picks)


def test_total_loss_input_gradients(setup):
    # the frozen visual path runs without autograd, so unfreeze it here to
    # make the analytic gradient cover every route from the frames
    _, prev, cur, batch = setup
    torch.manual_seed(0)
    model = TTHF("toy-conv", C, finetune_visual=True).double()
    prev, cur = prev.clone().requires_grad_(True), cur.clone().requires_grad_(True)
    f = _loss_fn(model, prev, cur, batch)
    f().backward()
    g = torch.Generator().manual_seed(8)
    for t in (prev, cur):
        _check(f, t, torch.randperm(t.numel(), generator=g)[:6].tolist())
