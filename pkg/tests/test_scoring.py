import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from tthf.dataset import generate_synthetic_dataset
from tthf.model import TTHF
from tthf.scoring import ScoreSeries, anomaly_score, score_frames, score_video, similarity_softmax

D64 = torch.float64
UNIFORM_SCORE = 1 - (1 / 11 + 1 / 2) / 2


def test_identical_prompts_uniform():
    p = torch.randn(1, 4).repeat(5, 1)
    out = similarity_softmax(torch.randn(4), p, 0.1)
    torch.testing.assert_close(out, torch.full((5,), 0.2))


def test_saturation_limit():
    prompts = torch.eye(3, dtype=D64)
    out = similarity_softmax(prompts[0], prompts, 0.001)
    assert out[0].item() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_similarity_softmax_scalar_oracle(seed):
    rng = np.random.default_rng(seed)
    q, prompts = rng.normal(size=4), rng.normal(size=(3, 4))
    out = similarity_softmax(torch.tensor(q, dtype=torch.float32), torch.tensor(prompts, dtype=torch.float32), 0.3)
    np.testing.assert_allclose(out.numpy(), oracles.cosine_softmax(q.tolist(), prompts.tolist(), 0.3), atol=1e-6)
    assert out.sum().item() == pytest.approx(1.0, abs=1e-6)


def test_zero_norm_rejected():
    with pytest.raises(ValueError):
        similarity_softmax(torch.zeros(4), torch.randn(3, 4), 1.0)
    with pytest.raises(ValueError):
        similarity_softmax(torch.ones(4), torch.zeros(3, 4), 1.0)


# --- fixed points ---------------------------------------------------------------

DIM = 14  # 11 fine axes, 2 general axes, 1 spare


def _axes(first, n):
    out = torch.zeros(n, DIM, dtype=D64)
    for i in range(n):
        out[i, first + i] = 1.0
    return out


FINE, GENERAL = _axes(0, 11), _axes(11, 2)


def test_score_zero_for_perfect_normal():
    assert anomaly_score(FINE[10], GENERAL[1], FINE, GENERAL, 1e-3).item() == pytest.approx(0.0, abs=1e-9)


def test_score_one_for_perfect_anomaly():
    assert anomaly_score(FINE[0], GENERAL[0], FINE, GENERAL, 1e-3).item() == pytest.approx(1.0, abs=1e-9)


def test_score_uniform_similarity():
    assert UNIFORM_SCORE == pytest.approx(0.7045454545, abs=1e-9)
    fine = torch.randn(1, 6).repeat(11, 1)
    general = torch.randn(1, 6).repeat(2, 1)
    out = anomaly_score(torch.randn(6), torch.randn(6), fine, general, 0.07)
    assert out.item() == pytest.approx(UNIFORM_SCORE, abs=1e-6)


def test_score_scalar_oracle():
    rng = np.random.default_rng(3)
    f, g, fine, general = rng.normal(size=5), rng.normal(size=5), rng.normal(size=(11, 5)), rng.normal(size=(2, 5))
    ref = 1 - (
        oracles.cosine_softmax(f.tolist(), fine.tolist(), 0.5)[10] + oracles.cosine_softmax(g.tolist(), general.tolist(), 0.5)[1]
    ) / 2
    out = anomaly_score(*(torch.tensor(x, dtype=torch.float32) for x in (f, g, fine, general)), 0.5)
    assert out.item() == pytest.approx(ref, abs=1e-6)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), delta=st.floats(0.01, 0.5))
def test_raising_normal_cosine_lowers_score(seed, delta):
    # Orthonormal prompts: trading mass from the spare axis into axis 10 at
    # fixed |F| raises cos(F, T'_11) and leaves every other cosine unchanged.
    g = torch.Generator().manual_seed(seed)
    f = torch.zeros(DIM, dtype=D64)
    f[:11] = 0.1 + 0.3 * torch.rand(11, generator=g, dtype=D64)
    f[-1] = 1.0
    enhanced = torch.rand(DIM, generator=g, dtype=D64) + 0.1
    moved = f.clone()
    radius = (f[10] ** 2 + f[-1] ** 2).sqrt()
    moved[10] = min(f[10].item() + delta, 0.99 * radius.item())
    moved[-1] = (radius**2 - moved[10] ** 2).sqrt()
    assert torch.dot(moved, FINE[10]) > torch.dot(f, FINE[10])
    torch.testing.assert_close(moved.norm(), f.norm())
    before = anomaly_score(f, enhanced, FINE, GENERAL, 0.3).item()
    after = anomaly_score(moved, enhanced, FINE, GENERAL, 0.3).item()
    assert after < before


# --- series ---------------------------------------------------------------------


def test_series_validation():
    with pytest.raises(ValueError):
        ScoreSeries("v", [0.1, 0.2], [0])
    with pytest.raises(ValueError):
        ScoreSeries("v", [1.2], [0])
    with pytest.raises(ValueError):
        ScoreSeries("v", [float("nan")], [0])


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(0)
    return TTHF("toy-conv", 16).eval()


@pytest.fixture(scope="module")
def videos():
    return generate_synthetic_dataset(seed=5, n_videos=4, frames_per_video=10, image_size=32)


def test_two_frame_video_equal_scores(model, videos):
    frames = [videos.records[0].frames[i] for i in range(2)]
    scores = score_frames(model, frames, videos.mean, videos.std)
    assert scores.shape == (2,) and scores[0] == scores[1]


def test_score_video_deterministic_and_in_range(model, videos):
    for rec in videos.records:
        a = score_video(rec, model, videos.mean, videos.std)
        b = score_video(rec, model, videos.mean, videos.std)
        assert np.array_equal(a.scores, b.scores)
        assert a.scores.shape == (10,)
        assert ((a.scores >= 0) & (a.scores <= 1)).all()
        assert a.labels.tolist() == rec.frame_labels().tolist()


def test_score_range_over_sampled_models(videos):
    for seed in range(3):
        torch.manual_seed(seed)
        m = TTHF("toy-conv", 8).eval()
        s = score_video(videos.records[1], m, videos.mean, videos.std)
        assert ((s.scores >= 0) & (s.scores <= 1)).all()


def test_single_frame_rejected(model, videos):
    with pytest.raises(ValueError):
        score_frames(model, [videos.records[0].frames[0]])


@settings(max_examples=100, deadline=None)
@given(batch=st.integers(1, 9))
def test_batch_composition_invariance(model, videos, batch):
    rec = videos.records[2]
    alone = score_frames(model, rec.frames, videos.mean, videos.std, batch_size=1)
    grouped = score_frames(model, rec.frames, videos.mean, videos.std, batch_size=batch)
    np.testing.assert_allclose(alone, grouped, atol=1e-6, rtol=0)
