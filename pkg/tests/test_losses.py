import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ibdetect import autodiff as ad
from ibdetect import oracle
from ibdetect.autodiff import Tape, Tensor
from ibdetect.losses import (
    LossWeights, global_information_loss, kl_sum, lil_from_kl_sum, local_information_loss, total_loss,
)

from gradcheck import max_relative_error

LN2 = math.log(2.0)


def test_lil_is_one_for_identical_predictions(rng):
    z = rng.normal(size=(5, 2))
    assert local_information_loss(Tensor(z), [Tensor(z), Tensor(z.copy())]).item() == 1.0


def test_lil_of_ln2_is_half():
    assert lil_from_kl_sum(Tensor(np.array(LN2))).item() == pytest.approx(0.5, abs=1e-15)


def test_lil_clamp():
    assert lil_from_kl_sum(Tensor(np.array(50.0)), kappa=20).item() == pytest.approx(math.exp(-20))
    assert lil_from_kl_sum(Tensor(np.array(50.0)), kappa=20).item() > 0


def test_lil_needs_two_masks():
    with pytest.raises(ValueError, match="two"):
        local_information_loss(Tensor(np.zeros((2, 2))), [Tensor(np.zeros((2, 2)))])
    with pytest.raises(ValueError):
        kl_sum(Tensor(np.zeros((2, 2))), [])


def test_lil_range_on_random_batches(rng):
    for _ in range(200):
        n = int(rng.integers(2, 6))
        scale = rng.choice([0.1, 1.0, 10.0])
        joint = Tensor(rng.normal(size=(8, 2)) * scale)
        masked = [Tensor(rng.normal(size=(8, 2)) * scale) for _ in range(n)]
        value = local_information_loss(joint, masked).item()
        assert 0.0 < value <= 1.0


def test_lil_gradient(rng):
    joint = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    masked = [Tensor(rng.normal(size=(4, 2)), requires_grad=True) for _ in range(3)]
    assert max_relative_error(lambda: local_information_loss(joint, masked), [joint, *masked]) <= 1e-4


def test_lil_monotone_in_one_kl(rng):
    joint = rng.normal(size=(4, 2))
    fixed = Tensor(joint + rng.normal(size=(4, 2)) * 0.3)
    values = []
    for shift in (0.0, 0.5, 1.0, 2.0):
        moved = joint.copy()
        moved[:, 0] += shift
        values.append(local_information_loss(Tensor(joint), [fixed, Tensor(moved)]).item())
    assert all(a > b for a, b in zip(values, values[1:]))


def test_gil_examples():
    z = np.array([[0.3, -1.2], [2.0, 0.1]])
    assert global_information_loss(Tensor(z), Tensor(z)).item() == 0.0
    point = Tensor(np.array([[0.0, -60.0]]))
    assert global_information_loss(point, Tensor(np.zeros((1, 2)))).item() == pytest.approx(LN2, abs=1e-9)
    with pytest.raises(ad.ShapeError):
        global_information_loss(Tensor(np.zeros((2, 2))), Tensor(np.zeros((3, 2))))


def test_gil_matches_oracle_rowwise(rng):
    for _ in range(50):
        p, q = rng.normal(size=(6, 2)) * 2, rng.normal(size=(6, 2)) * 2
        sp, sq = ad.softmax_values(p), ad.softmax_values(q)
        rows = [oracle.kl_divergence(oracle.Categorical(a), oracle.Categorical(b)) for a, b in zip(sp, sq)]
        assert global_information_loss(Tensor(p), Tensor(q)).item() == pytest.approx(np.mean(rows), abs=1e-9)


def test_zero_kl_fixed_point_has_zero_gradients(rng):
    z = rng.normal(size=(5, 2))
    joint = Tensor(z, requires_grad=True)
    masked = [Tensor(z.copy(), requires_grad=True) for _ in range(3)]
    glob = Tensor(z.copy(), requires_grad=True)
    with Tape() as tape:
        loss = ad.add(local_information_loss(joint, masked), global_information_loss(joint, glob))
    tape.backward(loss)
    for t in [joint, glob, *masked]:
        assert np.abs(t.grad).max() <= 1e-10


# total loss -----------------------------------------------------------------

def scalar(v):
    return Tensor(np.array(v, dtype=np.float64))


def test_fixed_zero_weights_give_ce():
    total, bd = total_loss(scalar(0.7), scalar(0.4), scalar(0.2), LossWeights("fixed", 0.0, 0.0))
    assert total.item() == 0.7 and bd.total == 0.7


def test_fixed_arithmetic():
    total, bd = total_loss(scalar(LN2), scalar(1.0), scalar(0.0), LossWeights("fixed", 1.0, 1.0))
    assert total.item() == pytest.approx(LN2 + 1.0, abs=1e-15)
    assert bd.effective_alpha == 1.0 and bd.effective_beta == 1.0


def test_disabled_terms_are_absent():
    total, bd = total_loss(scalar(0.3), None, None, LossWeights("auto"))
    assert total.item() == 0.3
    assert bd.lil is None and bd.gil is None and bd.effective_alpha is None


def test_negative_fixed_weights_rejected():
    with pytest.raises(ValueError, match="non-negative"):
        LossWeights("fixed", -1.0, 1.0)
    with pytest.raises(ValueError):
        LossWeights("sometimes")


def test_auto_mode_starts_at_c_one():
    w = LossWeights("auto")
    assert w.scale_value("lil") == pytest.approx(1.0, abs=1e-12)
    assert w.effective("gil") == pytest.approx(0.5, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(raw_lil=st.floats(-3, 3), raw_gil=st.floats(-3, 3), ce=st.floats(0, 5))
def test_auto_mode_with_zero_losses(raw_lil, raw_gil, ce):
    w = LossWeights("auto")
    w.raw["lil"].values[:] = raw_lil
    w.raw["gil"].values[:] = raw_gil
    total, _ = total_loss(scalar(ce), scalar(0.0), scalar(0.0), w)
    c1, c2 = w.scale_value("lil"), w.scale_value("gil")
    assert total.item() == pytest.approx(ce + math.log1p(c1**2) + math.log1p(c2**2), rel=1e-12, abs=1e-12)
    build = lambda: total_loss(scalar(ce), scalar(0.0), scalar(0.0), w)[0]  # noqa: E731
    assert max_relative_error(build, w.parameters()) <= 1e-4


def test_auto_mode_gradient_with_nonzero_losses(rng):
    w = LossWeights("auto")
    lil = Tensor(np.array(0.6), requires_grad=True)
    gil = Tensor(np.array(0.3), requires_grad=True)
    build = lambda: total_loss(scalar(0.5), lil, gil, w)[0]  # noqa: E731
    assert max_relative_error(build, [lil, gil, *w.parameters()]) <= 1e-4


def test_breakdown_reports_kl_sum():
    _, bd = total_loss(scalar(0.1), scalar(0.5), None, LossWeights("fixed", 2.0, 0.0), kl_sum_lil=scalar(LN2))
    assert bd.kl_sum_lil == pytest.approx(LN2)
    assert bd.total == pytest.approx(1.1)
