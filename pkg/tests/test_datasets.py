"""Label rules, dataset generation, and container round-trips."""

import numpy as np
import pytest

from depthloc.datasets import (
    Dataset,
    DatasetFormatError,
    DatasetMeta,
    LabelRule,
    apply_rule,
    export_csv,
    gen_gaussian_inputs,
    k_global_feature,
    k_global_label,
    k_local_label,
    make_dataset,
    randomize_labels,
    read_dataset,
    write_dataset,
)


# ---------------------------------------------------------------- rules


def test_k_local_hand_cases():
    # product of coordinates 1 and 3 of (1, 2, -3) is -3 -> class 2
    assert k_local_label(np.array([1.0, 2.0, -3.0]), (1, 3)) == 2
    assert k_local_label(np.array([1.0, 2.0, -3.0]), (1, 2)) == 1
    # ties on the decision boundary go to class 1
    assert k_local_label(np.array([0.0, 5.0]), (1, 2)) == 1


def test_one_local_is_sign_of_first_coordinate():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((200, 7))
    labels = apply_rule(X, LabelRule("k_local", k=1))
    assert np.array_equal(labels, np.where(X[:, 0] >= 0, 1, 2))


def test_k_global_hand_case():
    # d=3, offsets (1,2): M = x2*x3 + x3*x1 + x1*x2 cyclically
    x = np.array([1.0, 1.0, -1.0])
    assert k_global_feature(x, (1, 2)) == pytest.approx(-1.0)
    assert k_global_label(x, (1, 2)) == 2
    assert k_global_label(np.array([1.0, 1.0, 1.0]), (1, 2)) == 1


def test_k_global_feature_matches_loop():
    rng = np.random.default_rng(11)
    offsets = (1, 3)
    for _ in range(20):
        d = int(rng.integers(4, 12))
        x = rng.standard_normal(d)
        want = sum(
            np.prod([x[(i + off) % d] for off in offsets]) for i in range(d)
        )
        assert k_global_feature(x, offsets) == pytest.approx(want, rel=1e-12)


def test_k_global_labels_cyclic_invariant():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((50, 9))
    rule = LabelRule("k_global", k=2)
    base = apply_rule(X, rule)
    for shift in (1, 4):
        assert np.array_equal(apply_rule(np.roll(X, shift, axis=1), rule), base)


def test_apply_rule_matches_scalar_labelers():
    rng = np.random.default_rng(9)
    X = rng.standard_normal((40, 6))
    loc = LabelRule("k_local", k=2, indices=(2, 5))
    glo = LabelRule("k_global", k=3)
    assert np.array_equal(
        apply_rule(X, loc), [k_local_label(x, (2, 5)) for x in X]
    )
    assert np.array_equal(
        apply_rule(X, glo), [k_global_label(x, (1, 2, 3)) for x in X]
    )


def test_rule_validation():
    with pytest.raises(ValueError):
        LabelRule("k_local")  # k missing
    with pytest.raises(ValueError):
        LabelRule("k_local", k=2, indices=(3, 3))
    with pytest.raises(ValueError):
        LabelRule("k_local", k=2, indices=(0, 1))
    with pytest.raises(ValueError):
        LabelRule("k_local", k=2, indices=(1, 2, 3))
    with pytest.raises(ValueError):
        LabelRule("parity", k=2)
    with pytest.raises(ValueError):
        LabelRule("ising")  # betas missing
    LabelRule("ising", beta1=0.1, beta2=0.3)


def test_rule_defaults_and_describe():
    rule = LabelRule("k_local", k=3)
    assert rule.resolved_indices() == (1, 2, 3)
    assert rule.describe() == "3-local"
    assert LabelRule("k_global", k=2).describe() == "2-global"
    assert LabelRule("random").describe() == "random"
    with pytest.raises(ValueError):
        LabelRule("k_local", k=2, indices=(1, 9)).validate_dim(5)


# ------------------------------------------------------------- datasets


def test_gaussian_inputs_reproducible_and_standard():
    X = gen_gaussian_inputs(4000, 5, seed=2)
    assert np.array_equal(X, gen_gaussian_inputs(4000, 5, seed=2))
    assert abs(X.mean()) < 0.05
    assert abs(X.std() - 1.0) < 0.05
    with pytest.raises(ValueError):
        gen_gaussian_inputs(0, 5, seed=2)


def test_make_dataset_deterministic_and_labeled():
    rule = LabelRule("k_local", k=2)
    a = make_dataset(rule, 300, 8, seed=4)
    b = make_dataset(rule, 300, 8, seed=4)
    assert np.array_equal(a.inputs, b.inputs)
    assert np.array_equal(a.labels, b.labels)
    assert np.array_equal(a.labels, apply_rule(a.inputs, rule))
    assert a.meta.rule == rule and a.meta.seed == 4
    assert a.K == 2 and a.d == 8 and a.n == 300


def test_random_rule_is_balanced_and_input_independent():
    ds = make_dataset(LabelRule("random"), 5000, 3, seed=6)
    frac = np.mean(ds.labels == 1)
    assert 0.45 < frac < 0.55
    assert set(np.unique(ds.labels)) == {1, 2}


def test_make_dataset_rejects_ising():
    with pytest.raises(ValueError):
        make_dataset(LabelRule("ising", beta1=0.1, beta2=0.3), 10, 4, seed=0)


def test_randomize_labels_shares_inputs():
    ds = make_dataset(LabelRule("k_local", k=2), 400, 6, seed=1)
    rnd = randomize_labels(ds, seed=9)
    assert rnd.inputs is ds.inputs
    assert rnd.meta.rule.kind == "random"
    assert 0.4 < np.mean(rnd.labels == 1) < 0.6
    # practically certain to differ from the rule labels somewhere
    assert not np.array_equal(rnd.labels, ds.labels)


def test_validate_catches_bad_labels():
    ds = make_dataset(LabelRule("random"), 10, 3, seed=0)
    ds.labels = ds.labels.copy()
    ds.labels[0] = 7
    with pytest.raises(ValueError):
        ds.validate()


# ---------------------------------------------------------- round trips


def test_container_round_trip(tmp_path):
    ds = make_dataset(LabelRule("k_local", k=2, indices=(2, 4)), 50, 6, seed=13)
    path = tmp_path / "x.locb"
    write_dataset(ds, str(path))
    back = read_dataset(str(path))
    assert np.array_equal(back.inputs, ds.inputs)
    assert np.array_equal(back.labels, ds.labels)
    assert back.meta.rule == ds.meta.rule
    assert back.meta.seed == 13
    assert back.d == 6 and back.K == 2


def test_container_round_trip_ising_rule(tmp_path):
    rule = LabelRule("ising", beta1=0.1, beta2=0.3)
    X = np.where(np.random.default_rng(0).random((20, 5)) < 0.5, -1.0, 1.0)
    labels = np.random.default_rng(1).integers(1, 3, size=20).astype(np.int64)
    ds = Dataset(X, labels, d=5, K=2, meta=DatasetMeta(rule=rule, seed=42))
    path = tmp_path / "spin.locb"
    write_dataset(ds, str(path))
    back = read_dataset(str(path))
    assert back.meta.rule.beta1 == pytest.approx(0.1)
    assert back.meta.rule.beta2 == pytest.approx(0.3)
    assert np.array_equal(back.inputs, X)


def test_reader_rejects_garbage(tmp_path):
    ds = make_dataset(LabelRule("random"), 8, 3, seed=0)
    path = tmp_path / "x.locb"
    write_dataset(ds, str(path))
    raw = path.read_bytes()

    bad_magic = tmp_path / "m.locb"
    bad_magic.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(DatasetFormatError):
        read_dataset(str(bad_magic))

    truncated = tmp_path / "t.locb"
    truncated.write_bytes(raw[:-5])
    with pytest.raises(DatasetFormatError):
        read_dataset(str(truncated))

    padded = tmp_path / "p.locb"
    padded.write_bytes(raw + b"\0")
    with pytest.raises(DatasetFormatError):
        read_dataset(str(padded))

    bad_version = tmp_path / "v.locb"
    bad_version.write_bytes(raw[:4] + b"\x63\0\0\0" + raw[8:])
    with pytest.raises(DatasetFormatError):
        read_dataset(str(bad_version))


def test_csv_export_round_trips_exactly(tmp_path):
    ds = make_dataset(LabelRule("k_local", k=2), 30, 4, seed=3)
    path = tmp_path / "x.csv"
    export_csv(ds, str(path))
    header = path.read_text().splitlines()[0]
    assert header == "x1,x2,x3,x4,label"
    table = np.loadtxt(str(path), delimiter=",", skiprows=1)
    # %.17g preserves every float64 bit
    assert np.array_equal(table[:, :4], ds.inputs)
    assert np.array_equal(table[:, 4].astype(np.int64), ds.labels)
