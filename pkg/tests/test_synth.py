import numpy as np
import pytest

from ibdetect import oracle
from ibdetect.metrics import discretize_features
from ibdetect.synth import (
    DEFAULT_SHIFT, DEFAULT_SPEC, FactorSpec, Shift, SpecError, distribution_shift_variant, generate_dataset,
    label_from_factors, load_dataset, make_benchmark, oversample_balance, save_dataset,
)


def segment_code(x, spec, j):
    """Median bits of a factor segment, aggregated along their leading principal direction."""
    return discretize_features(x[:, spec.segment(j)], bins=2)[0]


def test_default_spec_shape():
    spec = FactorSpec()
    assert spec.input_dim == 4 * 8 + 16
    assert DEFAULT_SPEC.input_dim == spec.input_dim


def test_spec_validation():
    with pytest.raises(SpecError):
        FactorSpec(k_factors=1)
    with pytest.raises(SpecError):
        FactorSpec(label_noise=0.5)
    with pytest.raises(SpecError):
        FactorSpec(label_rule="vote")
    with pytest.raises(SpecError):
        FactorSpec(amplitude=(1.0, 2.0))
    with pytest.raises(SpecError):
        FactorSpec(product_factors=(4,))
    assert FactorSpec.from_dict(DEFAULT_SPEC.to_dict()) == DEFAULT_SPEC


def test_parity_without_noise_is_xor():
    spec = FactorSpec(k_factors=2, label_rule="parity", label_noise=0.0, class_imbalance=None)
    ds = generate_dataset(spec, 500, seed=0)
    xor = (ds.factor_values[:, 0] > 0) ^ (ds.factor_values[:, 1] > 0)
    np.testing.assert_array_equal(ds.labels, xor.astype(int))


@pytest.mark.parametrize("rule", ["noisy_majority", "parity", "weighted_vote"])
def test_labels_rederive_from_factors(rule):
    spec = FactorSpec(label_rule=rule, label_noise=0.0)
    ds = generate_dataset(spec, 800, seed=3)
    np.testing.assert_array_equal(label_from_factors(spec, ds.factor_values), ds.labels)


def test_noise_mask_explains_flips():
    ds = generate_dataset(DEFAULT_SPEC, 2000, seed=1)
    clean = label_from_factors(DEFAULT_SPEC, ds.factor_values)
    np.testing.assert_array_equal(clean ^ ds.noise_mask, ds.labels)
    assert 0.02 < ds.noise_mask.mean() < 0.08


def test_majority_tie_goes_to_first_factor():
    f = np.array([[1, 1, -1, -1], [-1, 1, 1, -1]])
    np.testing.assert_array_equal(label_from_factors(FactorSpec(), f), [1, 0])


def test_seed_determinism():
    a = generate_dataset(DEFAULT_SPEC, 300, seed=9)
    b = generate_dataset(DEFAULT_SPEC, 300, seed=9)
    assert a.inputs.tobytes() == b.inputs.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()
    assert a.fingerprint() == b.fingerprint()
    assert generate_dataset(DEFAULT_SPEC, 300, seed=10).fingerprint() != a.fingerprint()


def test_balanced_by_default():
    ds = generate_dataset(FactorSpec(), 1001, seed=0)
    assert abs(int(ds.labels.sum()) - 500) <= 1


def test_row_permutation_keeps_segment_label_statistics():
    ds = generate_dataset(FactorSpec(), 2000, seed=2)
    perm = np.random.default_rng(0).permutation(len(ds))
    moved = ds.take(perm)
    seg = ds.spec.segment(1)
    for a, b in ((ds.inputs[:, seg].mean(axis=0), moved.inputs[:, seg].mean(axis=0)),):
        np.testing.assert_allclose(a, b, atol=1e-12)
    assert ds.labels.mean() == moved.labels.mean()


def test_factor_segments_carry_label_information():
    spec = FactorSpec()
    ds = generate_dataset(spec, 10_000, seed=4)
    for j in range(spec.k_factors):
        code = segment_code(ds.inputs, spec, j)
        j_mi = oracle.mutual_information(oracle.empirical_joint({"c": code, "y": ds.labels}), "c", "y")
        # plug-in bias for a 2x2 table at N=10k is about 1/(2N) = 5e-5 nats; ask for well over ten times that
        assert j_mi > 0.002
    nuisance = (ds.inputs[:, spec.nuisance] > 0).astype(int)
    for d in range(nuisance.shape[1]):
        mi = oracle.mutual_information(oracle.empirical_joint({"c": nuisance[:, d], "y": ds.labels}), "c", "y")
        assert mi <= 0.01


def test_segments_independent_of_other_factors():
    spec = FactorSpec()
    ds = generate_dataset(spec, 10_000, seed=5)
    for i in range(spec.k_factors):
        code = segment_code(ds.inputs, spec, i)
        for j in range(spec.k_factors):
            if i == j:
                continue
            latent = (ds.factor_values[:, j] > 0).astype(int)
            mi = oracle.mutual_information(oracle.empirical_joint({"c": code, "f": latent}), "c", "f")
            assert mi <= 0.01


def test_product_factor_has_no_linear_signal():
    spec = FactorSpec(product_factors=(1,), label_noise=0.0)
    ds = generate_dataset(spec, 20_000, seed=6)
    seg = ds.inputs[:, spec.segment(1)]
    s = ds.factor_values[:, 1].astype(float)
    corr = np.abs([np.corrcoef(seg[:, d], s)[0, 1] for d in range(seg.shape[1])])
    assert corr.max() < 0.03


def test_group_rows_share_label():
    ds = generate_dataset(FactorSpec(), 600, seed=0, group_size=5)
    for g in np.unique(ds.group_ids):
        assert len(set(ds.labels[ds.group_ids == g])) == 1
    assert len(np.unique(ds.group_ids)) == 120


def test_val_split_takes_whole_groups():
    ds = generate_dataset(FactorSpec(), 1000, seed=0, group_size=4, val_fraction=0.2)
    assert set(ds.split_sizes()) == {"train", "val"}
    for g in np.unique(ds.group_ids):
        assert len(set(ds.split[ds.group_ids == g])) == 1


# oversampling ---------------------------------------------------------------

def test_oversample_already_balanced_is_unchanged():
    ds = generate_dataset(FactorSpec(), 400, seed=0)
    assert len(oversample_balance(ds, 0)) == 400


def test_oversample_90_10():
    spec = FactorSpec(class_imbalance=0.1)
    ds = generate_dataset(spec, 1000, seed=0)
    out = oversample_balance(ds, 0)
    counts = np.bincount(out.labels)
    assert abs(counts[0] - 900) <= 1 and abs(counts[1] - 900) <= 1
    extra = out.take(np.arange(len(ds), len(out)))
    originals = {row.tobytes() for row in ds.inputs[ds.labels == 1]}
    assert all(row.tobytes() in originals for row in extra.inputs)


def test_oversample_leaves_val_alone():
    spec = FactorSpec(class_imbalance=0.2)
    ds = generate_dataset(spec, 1000, seed=0, val_fraction=0.25)
    out = oversample_balance(ds, 0)
    assert out.split_sizes()["val"] == ds.split_sizes()["val"]


def test_oversample_single_class_errors():
    ds = generate_dataset(FactorSpec(), 100, seed=0)
    ds = ds.take(np.flatnonzero(ds.labels == 1))
    with pytest.raises(SpecError, match="single class"):
        oversample_balance(ds, 0)


# shift ----------------------------------------------------------------------

def test_zero_shift_is_identity():
    assert distribution_shift_variant(DEFAULT_SPEC, Shift()) is DEFAULT_SPEC


def test_shift_that_removes_a_factor_errors():
    with pytest.raises(SpecError, match="label dependence"):
        distribution_shift_variant(FactorSpec(), Shift(amplitude_scale=(0.0, 1.0, 1.0, 1.0)))


def test_shift_preserves_label_rule_and_oracle_accuracy():
    shifted = distribution_shift_variant(DEFAULT_SPEC, DEFAULT_SHIFT)
    assert shifted.label_rule == DEFAULT_SPEC.label_rule
    ds = generate_dataset(shifted, 20_000, seed=7)
    oracle_acc = np.mean(label_from_factors(shifted, ds.factor_values) == ds.labels)
    assert oracle_acc == pytest.approx(1 - shifted.label_noise, abs=0.01)


def test_shift_moves_input_statistics():
    base = generate_dataset(FactorSpec(), 5000, seed=8)
    shifted = generate_dataset(distribution_shift_variant(FactorSpec(), Shift(noise_scale=1.5)), 5000, seed=8)
    seg = FactorSpec().segment(0)
    v0, v1 = base.inputs[:, seg].var(), shifted.inputs[:, seg].var()
    # standard error of a variance estimate over 5000 * 8 values is about var * sqrt(2 / 40000)
    assert v1 - v0 > 3 * v0 * np.sqrt(2 / 40_000)


def test_benchmark_sizes():
    data, test = make_benchmark(DEFAULT_SPEC, DEFAULT_SHIFT, 300, 100, 150, seed=0)
    assert data.split_sizes() == {"train": 300, "val": 100}
    assert len(test) == 150 and set(test.split) == {"test"}


# persistence ----------------------------------------------------------------

def test_dataset_round_trip(tmp_path):
    ds = generate_dataset(DEFAULT_SPEC, 64, seed=1, val_fraction=0.25)
    save_dataset(ds, tmp_path / "d")
    back = load_dataset(tmp_path / "d")
    np.testing.assert_array_equal(back.inputs, ds.inputs)
    np.testing.assert_array_equal(back.labels, ds.labels)
    np.testing.assert_array_equal(back.factor_values, ds.factor_values)
    np.testing.assert_array_equal(back.split, ds.split)
    assert back.spec == ds.spec
