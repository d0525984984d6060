import numpy as np
import pytest
from hypothesis import given, strategies as st

from pdmkit.anomaly import AnomalyRule, ArimaForecaster, LstmForecaster, detect, flag, relative_error, rmse
from pdmkit.arima import ArimaConfig
from pdmkit.errors import RejectedInputError
from pdmkit.simulator import AnomalySpec, FarmSpec, gen_farm


def test_flag_examples():
    assert relative_error(10.0, 7.9) == pytest.approx(0.21)
    assert flag(10.0, 7.9)
    assert not flag(10.0, 9.0)
    assert not flag(3.3, 3.3, AnomalyRule(threshold=1e-12))


def test_flag_uses_floor_for_zero_prediction():
    assert flag(0.0, 1e-9, AnomalyRule(denominator_floor=1e-6)) is False
    assert flag(0.0, 1.0)


def test_flag_requires_finite_values():
    with pytest.raises(RejectedInputError):
        flag(np.nan, 1.0)


def test_rule_validation():
    with pytest.raises(RejectedInputError):
        AnomalyRule(threshold=0)
    with pytest.raises(RejectedInputError):
        AnomalyRule(denominator_floor=0)


@given(st.floats(1e-3, 1e6), st.floats(0.0, 2.0))
def test_two_sided_rule_is_symmetric(p, delta):
    assert flag(p, p * (1 + delta)) == flag(p, p * (1 - delta))


def test_one_sided_rule_only_flags_shortfall():
    rule = AnomalyRule(two_sided=False)
    assert flag(10.0, 7.0, rule)
    assert not flag(10.0, 13.0, rule)


@given(st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100)), min_size=1, max_size=40),
       st.floats(0.01, 2.0), st.floats(0.0, 3.0))
def test_raising_threshold_never_adds_flags(pairs, t1, extra):
    p, a = np.array(pairs).T
    low = relative_error(p, a, AnomalyRule(t1)) > t1
    high = relative_error(p, a, AnomalyRule(t1 + extra)) > t1 + extra
    assert high.sum() <= low.sum()


def test_rmse_examples():
    assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(np.sqrt(12.5), abs=1e-15)
    with pytest.raises(RejectedInputError):
        rmse([1.0], [1.0, 2.0])


@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=1, max_size=30), st.randoms())
def test_rmse_joint_permutation_invariance(pairs, rnd):
    p, a = np.array(pairs).T
    idx = list(range(len(p)))
    rnd.shuffle(idx)
    assert rmse(p[idx], a[idx]) == pytest.approx(rmse(p, a), rel=1e-12, abs=1e-12)


def clean_series(seed=0):
    return gen_farm(FarmSpec.for_sensor("SoilTemperature", duration_days=20, seed=seed, device=22))


def spiked_series(seed=0):
    spec = FarmSpec.for_sensor("SoilTemperature", duration_days=20, seed=seed, device=22,
                               anomalies=AnomalySpec(count=5, magnitude=0.5, kinds=("spike",), region=(0.66, 1.0)))
    return gen_farm(spec)


def test_clean_series_few_flags_with_lstm():
    s = clean_series()
    rep = detect(s.values, LstmForecaster(), 0.66)
    assert rep.n_flagged <= 0.02 * rep.n_test


def test_spikes_are_all_flagged():
    s = spiked_series()
    assert s.anomaly_indices.size == 5
    for fc in (ArimaForecaster(), LstmForecaster()):
        rep = detect(s.values, fc, 0.66)
        assert set(s.anomaly_indices) <= set(rep.flagged_indices.tolist())


def test_huge_threshold_flags_nothing():
    s = spiked_series()
    rep = detect(s.values, ArimaForecaster(), 0.66, AnomalyRule(threshold=1e9))
    assert rep.n_flagged == 0


def test_report_invariants():
    s = spiked_series(1)
    rep = detect(s.values, ArimaForecaster(ArimaConfig(p=4, d=1)), 0.66, timestamps=s.timestamps, name="soil")
    assert rep.rmse >= 0
    assert rep.rmse == rmse(rep.predictions, rep.actuals)
    assert np.all(rep.relative_errors[rep.flagged] > rep.rule.threshold)
    table = rep.to_table().splitlines()
    assert table[0] == "index,timestamp,predicted,actual,relative_error"
    assert len(table) == rep.n_flagged + 2 and table[-1].startswith("# summary,model_type=arima")
    assert rep.plot_data().count("\n") == rep.n_test + 1


def test_detect_validates_split():
    with pytest.raises(RejectedInputError):
        detect(np.arange(50.0), ArimaForecaster(ArimaConfig(p=1, d=0)), 1.0)


def test_forecaster_failure_names_the_series():
    x = np.r_[np.arange(30.0), np.full(10, 3.0)]

    class Broken:
        model_type = "broken"

        def predict(self, series, n_train):
            return ArimaForecaster(ArimaConfig(p=25, d=1)).predict(series, n_train)

    with pytest.raises(RejectedInputError, match="probe"):
        detect(x, Broken(), 0.5, name="probe")
