import numpy as np
import pytest

from pdmkit.classifier import confusion, train_dnn_r
from pdmkit.errors import RejectedInputError
from pdmkit.features import split_by_recording, windows_from_recordings
from pdmkit.numcore import CROSS_ENTROPY, TrainConfig
from pdmkit.simulator import (BINARY_RPMS, GRID_RPMS, MEMS, PAPER_RPMS, SENSOR_TYPES, AnomalySpec, FarmSpec,
                              MotorSpec, dataset_bundle, default_farm_specs, farm_defaults, gen_farm, gen_motor,
                              gen_recording, with_health_gap)


def test_sample_counts():
    assert len(gen_recording(MotorSpec(sensor_kind=MEMS), 300, 0, 0).x) == 100
    r = gen_recording(MotorSpec(), 300, 0, 0)
    assert len(r.x) == len(r.y) == len(r.z) == 32000


def test_dominant_frequency_at_300_rpm():
    r = gen_recording(MotorSpec(recording_seconds=2.0), 300, 2, 1)
    spec = np.abs(np.fft.rfft(r.x))
    freqs = np.fft.rfftfreq(len(r.x), 1 / r.rate)
    assert abs(freqs[np.argmax(spec[1:]) + 1] - 5.0) <= freqs[1]


def test_health_raises_amplitude():
    spec = MotorSpec(noise_sigma=0, amplitude_jitter=0, recording_seconds=1.0)
    amps = [np.max(np.abs(gen_recording(spec, 300, k, 0).x)) for k in range(3)]
    assert amps[0] < amps[1] < amps[2]


def test_y_axis_is_small():
    r = gen_recording(MotorSpec(recording_seconds=1.0), 300, 0, 0)
    assert np.std(r.y) < 0.5 * np.std(r.x)


def test_mems_matches_piezo_on_noiseless_spec():
    common = dict(noise_sigma=0.0, y_sigma=0.0, recording_seconds=3.0, seed=4)
    p = gen_recording(MotorSpec(**common), 340, 1, 2)
    m = gen_recording(MotorSpec(sensor_kind=MEMS, **common), 340, 1, 2)
    # 3200 Hz and 10 Hz share every 320th timestamp
    np.testing.assert_allclose(m.x, p.x[::320], rtol=0, atol=1e-12)
    np.testing.assert_allclose(m.z, p.z[::320], rtol=0, atol=1e-12)


def test_motor_is_deterministic_and_ordered():
    spec = MotorSpec(rpm_list=(100, 200), recordings_per_condition=2, recording_seconds=0.1, seed=8)
    a, b = gen_motor(spec), gen_motor(spec)
    assert [(r.rpm, r.label, r.index) for r in a][:3] == [(100, 0, 0), (100, 0, 1), (100, 1, 0)]
    assert all(np.array_equal(x.x, y.x) and np.array_equal(x.z, y.z) for x, y in zip(a, b))


def test_rpm_validation():
    with pytest.raises(RejectedInputError):
        gen_motor(MotorSpec(rpm_list=(250,)))
    with pytest.raises(RejectedInputError):
        gen_motor(MotorSpec(rpm_list=()))
    assert len(gen_motor(MotorSpec(rpm_list=(250,), allow_any_rpm=True, recordings_per_condition=1,
                                   recording_seconds=0.01))) == 3
    with pytest.raises(RejectedInputError):
        MotorSpec(recording_seconds=0)


def test_rpm_subsets():
    assert set(GRID_RPMS) <= set(PAPER_RPMS) and set(BINARY_RPMS) <= set(PAPER_RPMS)
    assert len(PAPER_RPMS) == 10 and len(GRID_RPMS) == 6 and len(BINARY_RPMS) == 5


def test_farm_length():
    assert len(gen_farm(FarmSpec.for_sensor("Temperature", duration_days=30))) == 2880
    with pytest.raises(RejectedInputError):
        FarmSpec("Temperature", duration_days=1.5)
    with pytest.raises(RejectedInputError):
        FarmSpec("Pressure")


def test_noiseless_farm_is_periodic():
    s = gen_farm(FarmSpec("SoilTemperature", duration_days=5, base=10, amplitude=3))
    np.testing.assert_allclose(s.values[96:], s.values[:-96], rtol=0, atol=1e-12)


def test_spike_construction():
    spec = FarmSpec.for_sensor("WaterNitrate", duration_days=10, anomalies=AnomalySpec(3, 0.5, ("spike",)))
    s = gen_farm(spec)
    idx = s.anomaly_indices
    assert len(idx) == 3
    np.testing.assert_allclose(s.values[idx], s.clean[idx] * 1.5, rtol=1e-15)
    rest = np.setdiff1d(np.arange(len(s)), idx)
    np.testing.assert_array_equal(s.values[rest], s.clean[rest])


def test_stuck_anomaly_repeats_last_value():
    spec = FarmSpec.for_sensor("Humidity", duration_days=10, anomalies=AnomalySpec(1, kinds=("stuck",)))
    s = gen_farm(spec)
    i = s.anomaly_indices[0]
    assert len(s.anomaly_indices) == 8
    assert np.all(s.values[i:i + 8] == s.values[i - 1])


def test_anomaly_count_bounds():
    with pytest.raises(RejectedInputError):
        gen_farm(FarmSpec.for_sensor("Temperature", duration_days=2, anomalies=AnomalySpec(count=500)))
    with pytest.raises(RejectedInputError):
        AnomalySpec(kinds=("wobble",))


def test_parameter_table_covers_all_types():
    table = farm_defaults()
    assert set(table) == set(SENSOR_TYPES)
    assert max(table, key=lambda k: table[k]["noise"] / max(abs(table[k]["base"]), 1e-9)) == "Humidity"


def test_parameter_table_rejects_unknown_keys(tmp_path):
    p = tmp_path / "farm.ini"
    p.write_text("[Temperature]\nbase = 1\nwobble = 2\n")
    with pytest.raises(RejectedInputError, match="wobble"):
        farm_defaults(p)
    p.write_text("[Pressure]\nbase = 1\n")
    with pytest.raises(RejectedInputError, match="Pressure"):
        default_farm_specs(params_path=p)


@pytest.fixture(scope="module")
def small_bundle():
    return dataset_bundle(seed=3, farm_days=3, motor_overrides={
        "Piezo": dict(rpm_list=(300,), recordings_per_condition=2, recording_seconds=0.2),
        "Mems": dict(rpm_list=(300,), recordings_per_condition=2, recording_seconds=2)})


def test_bundle_counts(small_bundle):
    counts = small_bundle.manifest_counts()
    farm = [k for k in counts if k.startswith("farm/")]
    assert len(farm) == 35
    c = counts[farm[0]]
    assert c["samples"] == 288 and c["train"] == 190 and c["test"] == 98
    motor = [k for k in counts if k.startswith("motor/")]
    assert len(motor) == 12
    assert counts["motor/Piezo/rpm300_Normal_000"] == dict(samples=640, train=320, test=320)


def test_bundle_is_deterministic(small_bundle):
    again = dataset_bundle(seed=3, farm_days=3, motor_overrides={
        "Piezo": dict(rpm_list=(300,), recordings_per_condition=2, recording_seconds=0.2),
        "Mems": dict(rpm_list=(300,), recordings_per_condition=2, recording_seconds=2)})
    assert all(np.array_equal(a.values, b.values) for a, b in zip(small_bundle.farm, again.farm))
    for kind in small_bundle.motor:
        assert all(np.array_equal(a.x, b.x) for a, b in zip(small_bundle.motor[kind], again.motor[kind]))


@pytest.mark.parametrize("seed", [0, 1])
def test_accuracy_grows_with_health_gap(seed):
    accs = []
    for gap in (0.1, 0.5, 1.5):
        spec = with_health_gap(MotorSpec(rpm_list=(300,), recordings_per_condition=30, recording_seconds=1.0,
                                         seed=seed), gap)
        tr, te = split_by_recording(windows_from_recordings(gen_motor(spec)), 0.7, seed)
        clf = train_dnn_r(tr, TrainConfig(epochs=20, batch_size=50, learning_rate=0.01, seed=seed,
                                          loss=CROSS_ENTROPY))
        accs.append(confusion(clf, te).accuracy)
    assert accs[0] <= accs[1] <= accs[2]
