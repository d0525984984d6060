import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pdmkit.errors import DegenerateFeatureError, RejectedInputError
from pdmkit.features import (BINARY_LABELS, WindowSet, apply_encoder, augment, binarize, canonical_axes, decimate,
                             fit_encoder, interpolate, invert_encoder, load_windows, save_windows, select_axes,
                             split_by_recording, window_count, window_signal, windows_from_recordings)
from pdmkit.lstm import WindowSpec
from pdmkit.simulator import MEMS, PIEZO, MotorSpec, gen_motor


def toy_set(n=12, L=4, axes=("X", "Y", "Z"), seed=0, rpms=(100, 200)):
    rng = np.random.default_rng(seed)
    rpm = np.array([rpms[i % len(rpms)] for i in range(n)])
    label = np.array([(i // len(rpms)) % 3 for i in range(n)])
    return WindowSet(rng.normal(size=(n, L * len(axes))), rpm, label, np.full(n, PIEZO, dtype=object), axes, L,
                     recording=np.arange(n) // 2)


def test_window_count_examples():
    out = window_signal({"X": np.arange(10.0)}, WindowSpec(5, 5), ("X",))
    assert out.shape == (2, 5)
    np.testing.assert_array_equal(out[1], [5, 6, 7, 8, 9])
    raw = {a: np.arange(20.0) for a in "XYZ"}
    assert window_signal(raw, WindowSpec(4, 4), ("X", "Z")).shape[1] == 8


@given(st.integers(1, 60), st.integers(1, 15), st.integers(1, 15))
def test_overlapping_window_count(n, L, stride):
    spec = WindowSpec(L, stride)
    starts = [s for s in range(n) if s + L <= n and s % stride == 0]
    assert window_count(n, spec) == len(starts)
    if n >= L:
        out = window_signal({"X": np.arange(float(n))}, spec, ("X",))
        np.testing.assert_array_equal(out[:, 0], starts)


def test_axis_order_is_x_z_y():
    raw = {"X": np.zeros(3), "Y": np.full(3, 2.0), "Z": np.ones(3)}
    out = window_signal(raw, WindowSpec(3, 3), ("Y", "X", "Z"))
    np.testing.assert_array_equal(out[0], [0, 0, 0, 1, 1, 1, 2, 2, 2])
    assert canonical_axes("zyx") == ("X", "Z", "Y")


def test_window_errors():
    with pytest.raises(RejectedInputError):
        window_signal({"X": np.arange(3.0)}, WindowSpec(3, 3), ())
    with pytest.raises(RejectedInputError):
        window_signal({"X": np.arange(3.0)}, WindowSpec(4, 4), ("X",))


def test_select_axes():
    w = toy_set(L=4)
    xz = select_axes(w, ("X", "Z"))
    assert xz.dim == 8 and xz.axes == ("X", "Z")
    np.testing.assert_array_equal(xz.features, w.features[:, :8])
    np.testing.assert_array_equal(xz.label, w.label)
    np.testing.assert_array_equal(xz.rpm, w.rpm)
    assert select_axes(w, "XYZ").same_as(w)
    with pytest.raises(RejectedInputError):
        select_axes(xz, ("Y",))


def test_encoder_population_std():
    enc = fit_encoder(np.array([[0.0], [2.0]]))
    assert enc.mean[0] == 1.0 and enc.std[0] == 1.0


def test_encoded_training_set_is_standardised(rng):
    X = rng.normal(3.0, 5.0, size=(200, 6))
    Z = apply_encoder(fit_encoder(X), X)
    np.testing.assert_allclose(Z.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(Z.std(axis=0), 1.0, atol=1e-9)


def test_encoder_is_permutation_invariant():
    # integer-valued features keep the sums exact whatever the order
    X = np.random.default_rng(3).integers(-50, 50, size=(64, 5)).astype(float)
    a = fit_encoder(X)
    b = fit_encoder(X[np.random.default_rng(4).permutation(64)])
    assert a.same_as(b)


def test_degenerate_feature_is_named():
    X = np.random.default_rng(0).normal(size=(10, 4))
    X[:, 2] = 7.0
    with pytest.raises(DegenerateFeatureError, match="2"):
        fit_encoder(X)
    with pytest.raises(RejectedInputError):
        fit_encoder(X[:1])


def test_apply_invert_and_mean_input(rng):
    X = rng.normal(size=(30, 7)) * 100
    enc = fit_encoder(X)
    np.testing.assert_allclose(invert_encoder(enc, apply_encoder(enc, X)), X, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(apply_encoder(enc, enc.mean), np.zeros((1, 7)))
    with pytest.raises(RejectedInputError):
        apply_encoder(enc, np.zeros((2, 6)))


def test_encoder_crosses_sensor_kinds():
    piezo = windows_from_recordings(gen_motor(MotorSpec(rpm_list=(300,), recordings_per_condition=2,
                                                        recording_seconds=0.2)), WindowSpec(10, 10))
    mems = windows_from_recordings(gen_motor(MotorSpec(rpm_list=(300,), sensor_kind=MEMS,
                                                       recordings_per_condition=2, recording_seconds=5)))
    enc = fit_encoder(piezo)
    Z = apply_encoder(enc, mems)
    assert Z.features.shape == mems.features.shape and np.all(np.isfinite(Z.features))


def test_encoder_save_load(tmp_path):
    enc = fit_encoder(toy_set())
    enc.save(tmp_path / "e.pdm")
    from pdmkit.features import FeatureEncoder
    assert FeatureEncoder.load(tmp_path / "e.pdm").same_as(enc)


def test_interpolate_midpoint():
    np.testing.assert_array_equal(interpolate([0, 0], [2, 4], 0.5), [1, 2])


def test_augment_zero_is_identity():
    w = toy_set()
    assert augment(w, 0).same_as(w)


def test_augment_properties():
    w = toy_set(n=60, seed=5)
    out, parents = augment(w, {100: 40, 200: 25}, seed=9, return_parents=True)
    assert len(out) == len(w) + 65
    assert out.subset(np.arange(len(w))).same_as(w)
    for k, (a, b, lam) in enumerate(parents):
        new = out[len(w) + k]
        assert a != b and 0 <= lam <= 1
        assert w.rpm[a] == w.rpm[b] == new.rpm
        assert w.label[a] == w.label[b] == out.label[len(w) + k]
        lo = np.minimum(w.features[a], w.features[b])
        hi = np.maximum(w.features[a], w.features[b])
        assert np.all(new.features >= lo - 1e-12) and np.all(new.features <= hi + 1e-12)
        np.testing.assert_allclose(new.features, lam * w.features[a] + (1 - lam) * w.features[b], atol=1e-12)


def test_augment_skips_singleton_labels(caplog):
    w = WindowSet(np.arange(6.0).reshape(3, 2), [100, 100, 100], [0, 0, 1], [PIEZO] * 3, ("X",), 2)
    with caplog.at_level(logging.WARNING):
        out = augment(w, 5, seed=0)
    assert len(out) == 8 and np.all(out.label[3:] == 0)
    assert "fewer than 2" in caplog.text


def test_augment_is_seeded():
    w = toy_set(n=30)
    assert augment(w, 10, seed=1).same_as(augment(w, 10, seed=1))


def test_decimate():
    w = toy_set(L=6, axes=("X", "Z"))
    d = decimate(w, 3)
    np.testing.assert_array_equal(d.features, w.features[:, [0, 2, 4, 6, 8, 10]])
    assert decimate(w, 6) is w
    with pytest.raises(RejectedInputError, match="dim 8"):
        decimate(w, 4)


def test_binarize_counts():
    w = toy_set(n=30)
    b = binarize(w)
    assert b.classes == BINARY_LABELS
    counts = w.label_counts()
    assert b.label_counts() == {"Normal": counts["Normal"], "NotNormal": counts["NearFailure"] + counts["Failure"]}


def test_split_keeps_recordings_together():
    w = windows_from_recordings(gen_motor(MotorSpec(rpm_list=(100, 200), recordings_per_condition=5,
                                                    recording_seconds=0.5)))
    tr, te = split_by_recording(w, 0.7, seed=2)
    assert len(tr) + len(te) == len(w)
    assert not set(tr.recording) & set(te.recording)
    assert set(zip(tr.rpm, tr.label)) == set(zip(te.rpm, te.label))


def test_window_csv_round_trip(tmp_path):
    w = windows_from_recordings(gen_motor(MotorSpec(rpm_list=(300,), recordings_per_condition=2,
                                                    recording_seconds=0.3)))
    xz = select_axes(w, ("X", "Z"))
    save_windows(xz, tmp_path / "w.csv")
    assert load_windows(tmp_path / "w.csv").same_as(xz)
    save_windows(binarize(xz), tmp_path / "b.csv")
    assert load_windows(tmp_path / "b.csv").same_as(binarize(xz))


def test_motor_window_counts_match_enumeration():
    spec = MotorSpec(rpm_list=(100, 600), recordings_per_condition=3, recording_seconds=0.35)
    recs = gen_motor(spec)
    w = windows_from_recordings(recs)
    per = len(range(0, spec.samples_per_recording - 320 + 1, 320))
    assert len(w) == per * len(recs)
    assert w.dim == 960
