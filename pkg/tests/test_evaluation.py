import numpy as np
import pytest
from pydantic import ValidationError

from geossa.datagen import MixingParams, gen_model, make_two_class_covs, true_nspace
from geossa.errors import AllRestartsFailed, BadDims, EmptyClass, InsufficientData, MixedLabels
from geossa.evaluation import (
    ExperimentParams,
    MdmModel,
    MdmParams,
    mdm_accuracy,
    mdm_classify,
    mdm_train,
    nspace_error,
    nspace_error_raw,
    run_mdm_experiment,
    run_toy_experiment,
    run_toy_sweep,
)
from geossa.manifold_opt import Subspace, random_subspace
from geossa.gassa import Reference, project_to_s_space
from geossa.spd_core import MetricKind, karcher_residual, metric_mean

SMALL = dict(D=5, m=2, N=10, T=100, restarts=1)


@pytest.fixture
def model():
    return gen_model(MixingParams(D=6, m=2, N=4, seed=0))


def test_nspace_error_of_truth_is_zero(model):
    assert nspace_error(true_nspace(model), model) <= 1e-7


def test_nspace_error_is_normalized(model):
    for seed in range(10):
        error = nspace_error(random_subspace(6, 4, seed=seed), model)
        assert 0.0 <= error <= 1.0
        raw = nspace_error_raw(random_subspace(6, 4, seed=seed), model)
        assert error == pytest.approx(raw / (2.0 * np.pi / 2))


def test_nspace_error_rejects_wrong_dimension(model):
    with pytest.raises(BadDims):
        nspace_error(random_subspace(6, 2, seed=0), model)


def test_mdm_with_true_subspace_classifies_well():
    data = make_two_class_covs(D=6, m=2, n_per_class=30, seed=1)
    train, test = slice(0, 40), slice(40, 60)
    mdm = mdm_train(data.covs[train], data.labels[train], data.s_basis)
    assert set(mdm.class_means) == {0, 1}
    assert mdm_accuracy(mdm, data.covs[test], data.labels[test]) >= 0.9


def test_mdm_stein_metric():
    data = make_two_class_covs(D=5, m=2, n_per_class=20, seed=2)
    mdm = mdm_train(data.covs, data.labels, data.s_basis, MetricKind.STEIN)
    assert mdm.metric is MetricKind.STEIN
    assert mdm_accuracy(mdm, data.covs, data.labels) >= 0.9


def test_mdm_ties_go_to_the_lower_label():
    s_basis = Subspace(basis=np.eye(4)[:, :2])
    mdm = MdmModel(class_means={"b": np.eye(2), "a": np.eye(2)}, metric=MetricKind.AIRM, s_basis=s_basis)
    assert mdm_classify(mdm, 2.0 * np.eye(4)) == "a"


def test_mdm_training_errors():
    data = make_two_class_covs(D=4, m=2, n_per_class=3, seed=3)
    with pytest.raises(EmptyClass):
        mdm_train(data.covs, data.labels, data.s_basis, classes=[0, 1, 2])
    with pytest.raises(InsufficientData):
        mdm_train(data.covs[:1], data.labels[:1], data.s_basis)
    with pytest.raises(InsufficientData):
        mdm_train(data.covs, data.labels[:2], data.s_basis)
    mdm = mdm_train(data.covs, data.labels, data.s_basis)
    with pytest.raises(InsufficientData):
        mdm_accuracy(mdm, [], [])


def test_experiment_params_validation():
    with pytest.raises(ValidationError):
        ExperimentParams(D=4, m=4)
    with pytest.raises(ValidationError):
        ExperimentParams(methods=["pca"])


def test_empty_method_list_gives_empty_report():
    report = run_toy_experiment(ExperimentParams(methods=[], **SMALL))
    assert report.records == []
    assert report.summaries == []
    assert report.valid


def test_small_toy_experiment():
    params = ExperimentParams(repeats=2, methods=["gassa_airm_w", "ssa"], seed=5, **SMALL)
    report = run_toy_experiment(params)
    assert report.valid
    assert len(report.records) == 4
    for method in params.methods:
        summary = report.summary(method)
        assert summary.repeats == 2
        assert summary.failures == 0
        assert 0.0 <= summary.mean <= 1.0
        assert summary.std is not None
    frame = report.summary_frame()
    assert list(frame["method"]) == ["gassa_airm_w", "ssa"]


def test_toy_experiment_is_deterministic():
    params = ExperimentParams(repeats=2, methods=["gassa_stein_nw"], seed=1, **SMALL)
    first = [r.error for r in run_toy_experiment(params).records]
    second = [r.error for r in run_toy_experiment(params).records]
    assert first == second


def test_single_repeat_has_no_std():
    report = run_toy_experiment(ExperimentParams(repeats=1, methods=["gassa_airm_nw"], **SMALL))
    assert report.summary("gassa_airm_nw").std is None


def test_failures_are_counted_and_invalidate_the_report(mocker):
    mocker.patch("geossa.evaluation.fit", side_effect=AllRestartsFailed("all 1 restarts failed"))
    report = run_toy_experiment(ExperimentParams(repeats=2, methods=["gassa_airm_w"], **SMALL))
    summary = report.summary("gassa_airm_w")
    assert summary.failures == 2
    assert summary.mean is None
    assert not report.valid
    assert report.records[0].message.startswith("all_restarts_failed")


def test_sweep_is_keyed_by_dimensions():
    params = ExperimentParams(repeats=1, methods=["gassa_airm_w"], **SMALL)
    reports = run_toy_sweep(params, [(4, 1), (5, 3)])
    assert list(reports) == ["4:1", "5:3"]
    assert reports["5:3"].params.m == 3


def test_mdm_rejects_mixed_label_types():
    data = make_two_class_covs(D=4, m=2, n_per_class=3, seed=3)
    labels = [0, "1"] * 3
    with pytest.raises(MixedLabels):
        mdm_train(data.covs, labels, data.s_basis)
    with pytest.raises(MixedLabels):
        mdm_train(data.covs, data.labels, data.s_basis, classes=[0, "1"])


def test_mdm_string_labels():
    data = make_two_class_covs(D=5, m=2, n_per_class=10, seed=4)
    labels = ["left" if y == 0 else "right" for y in data.labels]
    mdm = mdm_train(data.covs, labels, data.s_basis)
    assert sorted(mdm.class_means) == ["left", "right"]
    assert all(type(label) is str for label in mdm.class_means)
    assert mdm_accuracy(mdm, data.covs, labels) >= 0.9


def test_mdm_numpy_labels_are_plain_python():
    data = make_two_class_covs(D=4, m=2, n_per_class=4, seed=5)
    mdm = mdm_train(data.covs, np.array(data.labels), data.s_basis)
    assert all(type(label) is int for label in mdm.class_means)
    assert mdm_classify(mdm, data.covs[1]) in (0, 1)


@pytest.mark.parametrize("metric", list(MetricKind))
def test_mdm_class_means_are_metric_means(metric):
    data = make_two_class_covs(D=5, m=2, n_per_class=8, seed=6)
    mdm = mdm_train(data.covs, data.labels, data.s_basis, metric)
    for label in (0, 1):
        members = [project_to_s_space(data.s_basis, S) for S, y in zip(data.covs, data.labels) if y == label]
        np.testing.assert_allclose(mdm.class_means[label], metric_mean(members, metric), atol=1e-8)
        if metric is MetricKind.AIRM:
            assert karcher_residual(mdm.class_means[label], members) <= 1e-8


def test_mdm_experiment():
    gassa = ["gassa_airm_w", "gassa_airm_nw", "gassa_stein_w", "gassa_stein_nw"]
    params = MdmParams(D=6, m=2, n_train=15, n_test=15, methods=gassa + ["ssa"], restarts=1)
    report = run_mdm_experiment(params)
    assert report.oracle_accuracy >= 0.9
    assert set(report.accuracy) == set(params.methods)
    for method in gassa:
        assert report.accuracy[method] >= 0.9
    assert report.accuracy["ssa"] is None or 0.0 <= report.accuracy["ssa"] <= 1.0


def _standard_error(values):
    values = np.asarray(values, dtype=float)
    return values.std(ddof=1) / np.sqrt(len(values))


@pytest.mark.slow
@pytest.mark.timeout(7200)
def test_toy_benchmark_accuracy_and_ordering():
    report = run_toy_experiment(ExperimentParams(repeats=10, n_jobs=-1))
    assert report.valid
    means = {s.method: s.mean for s in report.summaries}
    for metric in ("airm", "stein"):
        whitened, plain = means[f"gassa_{metric}_w"], means[f"gassa_{metric}_nw"]
        assert whitened <= 5 * 0.0067
        assert plain <= 5 * 0.0067
        # whitening is a congruence, so both modes reach the same fit
        assert plain <= 1.05 * whitened
        assert plain <= 1.25 * means["ssa"]
    airm, stein = means["gassa_airm_nw"], means["gassa_stein_nw"]
    assert abs(airm - stein) <= 0.1 * max(airm, stein)


@pytest.mark.slow
@pytest.mark.timeout(7200)
def test_compressed_reference_removes_the_coupling_bias():
    base = ExperimentParams(repeats=10, methods=["gassa_airm_nw"], n_jobs=-1)
    errors = {}
    for reference in Reference:
        report = run_toy_experiment(base.model_copy(update={"reference": reference}))
        assert report.valid
        errors[reference] = np.array([r.error for r in report.records])
    gap = errors[Reference.GLOBAL] - errors[Reference.COMPRESSED]
    assert gap.mean() > 2 * _standard_error(gap)
