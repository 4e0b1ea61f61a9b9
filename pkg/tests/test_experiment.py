import numpy as np
import pytest

from ppp_cpd.core.errors import ConfigurationError, ExperimentError
from ppp_cpd.domain.models import DetectorSpec, ExperimentSpec, Scenario
from ppp_cpd.services.experiment_service import (
    ReplicationResult,
    bench_steps,
    calibration_seed,
    deviation_curve,
    report_from_results,
    run_experiment,
    run_replication,
    run_replications,
    sweep_thresholds,
)

SMALL = Scenario(kind="scenario_3d", n_train=40, n_total=70, change_at=55, seed=1)


def _spec(detectors=None, **overrides):
    fields = dict(
        scenario=SMALL,
        detectors=detectors or [DetectorSpec(kind="matrix", window=10)],
        replications=2,
        permutations=20,
        multipliers=[0.0, 0.5, 1.0, 2.0, 1e12],
    )
    fields.update(overrides)
    return ExperimentSpec(**fields)


def test_calibration_seed_is_deterministic_per_replication():
    assert calibration_seed(0, 3) == calibration_seed(0, 3)
    assert calibration_seed(0, 3) != calibration_seed(0, 4)
    assert calibration_seed(0, 3) != calibration_seed(1, 3)


def test_replication_traces_every_detector():
    spec = _spec([
        DetectorSpec(kind="matrix", window=10),
        DetectorSpec(kind="mmd", window=5),
        DetectorSpec(kind="kie", window=5, grid_res=4),
    ])
    result = run_replication(spec, 0)
    assert result.first_time == 41
    assert set(result.ratio_traces) == {"matrix", "mmd", "kie"}
    assert all(len(trace) == 30 for trace in result.ratio_traces.values())
    assert result.calibrations["matrix"].window == 10
    again = run_replication(spec, 0)
    np.testing.assert_array_equal(result.ratio_traces["matrix"], again.ratio_traces["matrix"])


def test_replication_errors_carry_the_index():
    spec = _spec([DetectorSpec(kind="matrix", window=100)])
    with pytest.raises(ExperimentError) as excinfo:
        run_replication(spec, 1)
    assert excinfo.value.replication == 1


def test_alarm_time_reads_the_trace():
    result = ReplicationResult(index=0, first_time=11, ratio_traces={"m": np.array([0.5, 2.0, 3.0])})
    assert result.alarm_time("m") == 12
    assert result.alarm_time("m", 2.5) == 13
    assert result.alarm_time("m", 10.0) is None


def test_experiment_report():
    spec = _spec()
    report = run_experiment(spec)
    summary = report["matrix"]
    assert len(summary.alarm_times) == 2
    total = summary.false_alarm_rate + summary.correct_detection_rate + summary.no_alarm_rate
    assert total == pytest.approx(1.0)
    assert report.change_at == 55 and report.n_total == 70


def test_parallel_replications_match_serial():
    spec = _spec()
    serial = run_replications(spec, workers=1)
    parallel = run_replications(spec, workers=2)
    assert [r.index for r in parallel] == [0, 1]
    for a, b in zip(serial, parallel):
        np.testing.assert_array_equal(a.ratio_traces["matrix"], b.ratio_traces["matrix"])


def test_huge_multiplier_never_alarms():
    spec = _spec()
    results = run_replications(spec)
    report = report_from_results(spec, results, multiplier=1e12)
    assert report["matrix"].no_alarm_rate == 1.0


def test_sweep_rows_and_limits():
    spec = _spec()
    results = run_replications(spec)
    frame = sweep_thresholds(spec, results=results)
    assert len(frame) == 5
    assert list(frame.columns) == ["detector", "multiplier", "fap", "add"]
    assert frame["fap"].iloc[0] == 1.0
    assert frame["fap"].iloc[-1] == 0.0
    assert frame["add"].iloc[-1] == 70 - 55
    assert list(frame["fap"]) == sorted(frame["fap"], reverse=True)


def test_sweep_preconditions():
    with pytest.raises(ConfigurationError):
        sweep_thresholds(_spec(scenario=SMALL.without_change()), results=[])
    with pytest.raises(ConfigurationError):
        sweep_thresholds(_spec(), multipliers=[2.0, 1.0], results=[])


def test_deviation_curve_shrinks_with_more_windows():
    curve = deviation_curve([10, 160], replications=5, seed=2)
    assert set(curve) == {10, 160}
    assert curve[160] < curve[10]


def test_bench_steps():
    result = bench_steps(n_steps=22, n_train=100)
    assert result.n_steps == 22
    assert result.early_median > 0 and result.late_median > 0
    assert set(result.to_dict()) == {"early_median", "late_median", "ratio", "n_steps"}
    with pytest.raises(ConfigurationError):
        bench_steps(n_steps=5)



REDUCED = dict(n_train=200, n_total=300)


def _reduced_spec(kind, detector, window=20, replications=20, **scenario):
    fields = dict(REDUCED, change_at=250, seed=7)
    fields.update(scenario)
    return ExperimentSpec(
        scenario=Scenario(kind=kind, **fields),
        detectors=[DetectorSpec(kind=detector, window=window)],
        replications=replications,
        workers=2,
    )


@pytest.mark.parametrize("kind,detector", [("scenario_3d", "matrix"), ("scenario_1d", "matrix_1d")])
def test_no_change_false_alarm_rate_reduced(kind, detector):
    spec = _reduced_spec(kind, detector, change_at=None)
    report = run_experiment(spec)
    assert report[detector].false_alarm_rate <= 0.25


def test_one_dimensional_detection_reduced():
    summary = run_experiment(_reduced_spec("scenario_1d", "matrix_1d", seed=3))["matrix_1d"]
    assert summary.correct_detection_rate >= 0.7
    assert summary.add_mean <= 25


def test_four_dimensional_detection_reduced():
    summary = run_experiment(_reduced_spec("scenario_4d", "matrix", replications=16, seed=5))["matrix"]
    assert summary.correct_detection_rate >= 0.75
    assert summary.false_alarm_rate <= 0.25
    assert 0 < summary.add_mean <= 30


def _assert_sweep_shape(frame):
    fap = frame["fap"].to_numpy()
    add = frame["add"].to_numpy()
    assert np.all(np.diff(fap) <= 0)
    # rows with equal FAP average over the same replications
    same_set = (np.diff(fap) == 0) & (fap[1:] < 1.0)
    assert np.all(np.diff(add)[same_set] >= 0)


def test_sweep_is_monotone_reduced():
    spec = _reduced_spec("scenario_3d", "matrix", replications=12)
    frame = sweep_thresholds(spec, multipliers=[0.25, 0.5, 1.0, 2.0, 4.0, 1e12])
    _assert_sweep_shape(frame)
    assert frame["fap"].iloc[-1] == 0.0
    assert frame["add"].iloc[-1] == 50


def test_delay_shrinks_as_change_grows():
    adds = []
    for scale in (0.25, 0.5, 1.0):
        spec = _reduced_spec("scenario_3d", "matrix", replications=12, change_scale=scale)
        frame = sweep_thresholds(spec, multipliers=[1.0])
        adds.append(frame["add"].iloc[0])
    assert adds[0] >= adds[1] >= adds[2]
    assert adds[0] > adds[2]


def test_deviation_halves_when_windows_quadruple_reduced():
    curve = deviation_curve([40, 160, 640], replications=20, seed=4)
    assert 1.3 <= curve[40] / curve[160] <= 3.2
    assert 1.3 <= curve[160] / curve[640] <= 3.2


def test_step_cost_stays_flat_reduced():
    result = bench_steps(n_steps=1100, n_train=200)
    assert result.ratio <= 3.0


@pytest.mark.slow
def test_no_change_false_alarm_rate_at_full_scale():
    spec = ExperimentSpec(scenario=Scenario(change_at=None), replications=100, workers=4)
    report = run_experiment(spec)
    assert report["matrix"].false_alarm_rate <= 0.12


@pytest.mark.slow
def test_three_dimensional_detection_at_full_scale():
    report = run_experiment(ExperimentSpec(replications=100, workers=4))
    summary = report["matrix"]
    assert summary.false_alarm_rate <= 0.15
    assert summary.correct_detection_rate >= 0.85
    # a single post-change window already carries most of the count drop
    assert 1.0 <= summary.add_mean <= 20.0


@pytest.mark.slow
def test_four_dimensional_detection_at_full_scale():
    scenario = Scenario(kind="scenario_4d")
    summary = run_experiment(ExperimentSpec(scenario=scenario, replications=100, workers=4))["matrix"]
    assert summary.false_alarm_rate <= 0.15
    assert summary.correct_detection_rate >= 0.85
    assert 6.0 <= summary.add_mean <= 28.0


@pytest.mark.slow
def test_one_dimensional_detection_at_full_scale():
    scenario = Scenario(kind="scenario_1d", params={"base": 20.0, "amplitude": 10.0})
    detectors = [DetectorSpec(kind="matrix_1d")]
    summary = run_experiment(ExperimentSpec(scenario=scenario, detectors=detectors,
                                            replications=100, workers=4))["matrix_1d"]
    assert summary.correct_detection_rate >= 0.85
    null = run_experiment(ExperimentSpec(scenario=scenario.without_change(), detectors=detectors,
                                         replications=100, workers=4))["matrix_1d"]
    assert null.false_alarm_rate <= 0.12


@pytest.mark.slow
def test_sweep_is_monotone_at_full_scale():
    frame = sweep_thresholds(ExperimentSpec(replications=100, workers=4))
    assert len(frame) == 15
    _assert_sweep_shape(frame)


@pytest.mark.slow
def test_deviation_halves_when_windows_quadruple():
    curve = deviation_curve([250, 1000, 4000], replications=50)
    assert 1.5 <= curve[250] / curve[1000] <= 3.0
    assert 1.5 <= curve[1000] / curve[4000] <= 3.0


@pytest.mark.slow
def test_step_cost_stays_flat():
    assert bench_steps(n_steps=11000).ratio <= 2.0
