import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from cbgan_aug.losses import (
    LOSS_LOG_HEADER,
    LossReport,
    LossWeights,
    adv_loss_discriminator,
    adv_loss_discriminator_terms,
    adv_loss_generator,
    adv_loss_generator_terms,
    boundary_loss,
    perceptual_loss,
    perceptual_loss_terms,
    total_generator_objective,
)
from cbgan_aug.networks import DiscriminatorResult


def uniform_preds(value, sides=(6, 4, 3, 3), n=2):
    return [torch.full((n, 1, s, s), value) for s in sides]


def test_discriminator_symmetric_case():
    real, fake = uniform_preds(0.5), uniform_preds(0.5)
    terms = adv_loss_discriminator_terms(real, fake)
    assert all(abs(t.item() - 1.3863) < 1e-4 for t in terms)
    assert abs(adv_loss_discriminator(real, fake).item() - 5.5452) < 1e-4
    assert abs(adv_loss_discriminator(real, fake).item() - 8 * math.log(2)) < 1e-6


def test_discriminator_perfect_limit():
    loss = adv_loss_discriminator(uniform_preds(1.0), uniform_preds(0.0))
    assert 0 <= loss.item() < 1e-5


def test_generator_symmetric_case():
    loss = adv_loss_generator(uniform_preds(0.5))
    assert abs(loss.item() - 2.7726) < 1e-4
    assert 0 <= adv_loss_generator(uniform_preds(1.0)).item() < 1e-5


def test_saturated_predictions_stay_finite():
    assert torch.isfinite(adv_loss_discriminator(uniform_preds(0.0), uniform_preds(1.0)))
    assert torch.isfinite(adv_loss_generator(uniform_preds(0.0)))


def test_adversarial_random_vs_direct_formula():
    rng = np.random.default_rng(0)
    real = [rng.uniform(0.01, 0.99, (3, 1, s, s)) for s in (6, 4, 3, 3)]
    fake = [rng.uniform(0.01, 0.99, (3, 1, s, s)) for s in (6, 4, 3, 3)]
    d_expected = sum(-(np.log(r).mean() + np.log(1 - f).mean()) for r, f in zip(real, fake))
    g_expected = sum(-np.log(f).mean() for f in fake)
    t = lambda xs: [torch.from_numpy(x) for x in xs]  # noqa: E731
    assert abs(adv_loss_discriminator(t(real), t(fake)).item() - d_expected) < 1e-10
    assert abs(adv_loss_generator(t(fake)).item() - g_expected) < 1e-10
    wrapped = [DiscriminatorResult(x, []) for x in t(fake)]
    assert abs(adv_loss_generator(wrapped).item() - g_expected) < 1e-10
    assert len(adv_loss_generator_terms(wrapped)) == 4


def test_boundary_hand_cases():
    # channel 1 holds the boundary probability [0.5, 0.0]
    pred = torch.stack([1 - torch.tensor([[0.5, 0.0]]), torch.tensor([[0.5, 0.0]])])
    target = torch.tensor([[1.0, 0.0]])
    assert abs(boundary_loss(pred, target).item() - 0.125) < 1e-7
    ones = torch.stack([torch.zeros(4, 4), torch.ones(4, 4)])[None]
    assert boundary_loss(ones, torch.zeros(1, 4, 4)).item() == 1.0
    exact = torch.stack([1 - torch.eye(4), torch.eye(4)])[None]
    assert boundary_loss(exact, torch.eye(4)[None]).item() == 0.0


def test_boundary_is_mean_over_batch_and_pixels():
    rng = np.random.default_rng(1)
    p = rng.uniform(size=(3, 8, 8))
    y = (rng.uniform(size=(3, 8, 8)) < 0.3).astype(float)
    pred = torch.from_numpy(np.stack([1 - p, p], axis=1))
    assert abs(boundary_loss(pred, torch.from_numpy(y)).item() - ((p - y) ** 2).mean()) < 1e-12
    with pytest.raises(ValueError):
        boundary_loss(pred, torch.zeros(3, 4, 4))


def test_perceptual_ones_difference():
    real = [[torch.ones(2, 3, 4, 4)]]
    fake = [[torch.zeros(2, 3, 4, 4)]]
    assert abs(perceptual_loss(real, fake).item() - 1.0) < 1e-6


def test_perceptual_identical_is_zero():
    feats = [[torch.rand(1, 2, 3, 3) for _ in range(4)] for _ in range(4)]
    assert perceptual_loss(feats, feats).item() == 0.0


def test_perceptual_random_vs_direct_sum():
    rng = np.random.default_rng(2)
    shapes = [(2, 8, 9, 9), (2, 16, 5, 5), (2, 32, 3, 3), (2, 64, 2, 2)]
    real = [[rng.standard_normal(s) for s in shapes] for _ in range(4)]
    fake = [[rng.standard_normal(s) for s in shapes] for _ in range(4)]
    expected = sum(((r - f) ** 2).sum() / r.size for rm, fm in zip(real, fake) for r, f in zip(rm, fm))
    t = lambda xs: [[torch.from_numpy(x) for x in m] for m in xs]  # noqa: E731
    got = perceptual_loss(t(real), t(fake)).item()
    assert abs(got - expected) < 1e-9
    # symmetric in its arguments
    assert abs(perceptual_loss(t(fake), t(real)).item() - got) < 1e-9
    assert len(perceptual_loss_terms(t(real), t(fake))) == 4


def test_perceptual_detaches_real_side():
    real = [[torch.rand(1, 2, 3, 3, requires_grad=True)]]
    fake = [[torch.rand(1, 2, 3, 3, requires_grad=True)]]
    perceptual_loss(real, fake).backward()
    assert real[0][0].grad is None
    assert fake[0][0].grad is not None and fake[0][0].grad.abs().sum() > 0


def test_perceptual_shape_mismatch():
    with pytest.raises(ValueError):
        perceptual_loss([[torch.zeros(1, 2, 3, 3)]], [[torch.zeros(1, 2, 4, 4)]])


def test_total_objective_examples():
    assert total_generator_objective(3.0, 5.0, 7.0, LossWeights(0.0, 0.0)) == 3.0
    assert total_generator_objective(2.0, 0.25, 9.0, LossWeights(1.0, 0.0)) == 2.25


@settings(max_examples=100, deadline=None)
@given(
    st.floats(0, 50), st.floats(0, 1), st.floats(0, 50),
    st.floats(0, 100), st.floats(0, 100),
)
def test_total_objective_and_report_identity(g_adv, l_b, l_p, lam1, lam2):
    w = LossWeights(lam1, lam2)
    total = total_generator_objective(g_adv, l_b, l_p, w)
    assert math.isclose(total, math.fsum([g_adv, lam1 * l_b, lam2 * l_p]), rel_tol=1e-12, abs_tol=1e-12)
    rep = LossReport(0.0, g_adv, l_b, l_p, total, [g_adv / 4] * 4, [l_p / 4] * 4)
    assert abs(rep.total - (rep.g_adv + w.lambda1 * rep.l_b + w.lambda2 * rep.l_p)) <= 1e-6 * max(1.0, abs(total))


def test_loss_weights_validation():
    assert LossWeights() == LossWeights(10.0, 10.0)
    for bad in (-1.0, float("inf"), float("nan")):
        with pytest.raises(ValueError):
            LossWeights(lambda1=bad)


def test_loss_report_csv_roundtrip():
    rep = LossReport(1.5, 2.0, 0.1, 0.3, 6.0, [0.5, 0.5, 0.5, 0.5], [0.1, 0.1, 0.05, 0.05])
    row = dict(zip(LOSS_LOG_HEADER, rep.csv_row(7)))
    assert row["iteration"] == 7
    assert LossReport.from_csv_row(row) == rep
    assert LOSS_LOG_HEADER[:6] == ["iteration", "d_loss", "g_adv", "l_b", "l_p", "total"]
