import json

import numpy as np
import pytest
from scipy.stats import norm

from analytic_cil.classifiers import RegularizationParams
from analytic_cil.simulator import (
    DriftMap,
    PipelineConfig,
    StreamSpec,
    generate_stream,
    report_json,
    run_pipeline,
    simulate,
    two_gaussian_bayes_accuracy,
)

SMALL = dict(n_train=100, n_test=100, n_anchors=256, dim=8, effective_rank=4)


# ---------------------------------------------------------------- stream generation


def test_spec_validation():
    with pytest.raises(ValueError):
        StreamSpec(drift="rotation")
    with pytest.raises(ValueError):
        StreamSpec(dim=1)
    with pytest.raises(ValueError, match="unknown"):
        StreamSpec.from_dict({"n_tasks": 2, "bogus": 1})
    assert StreamSpec.from_dict({"n_tasks": 2}).n_tasks == 2


def test_defaults_are_ten_by_ten():
    s = StreamSpec()
    assert (s.n_tasks, s.classes_per_task, s.dim, s.n_train, s.n_test) == (10, 10, 64, 200, 500)


def test_stream_deterministic():
    spec = StreamSpec(n_tasks=3, classes_per_task=2, drift="nonlinear", **SMALL)
    a, b = generate_stream(spec, 4), generate_stream(spec, 4)
    assert np.array_equal(a.means, b.means) and np.array_equal(a.covs, b.covs)
    X = np.random.default_rng(0).standard_normal((5, 8))
    assert np.array_equal(a.feature_map(2)(X), b.feature_map(2)(X))
    assert np.array_equal(a.draw_latent(3, 10, "test"), b.draw_latent(3, 10, "test"))
    assert not np.array_equal(a.means, generate_stream(spec, 5).means)


@pytest.mark.parametrize("layout", ["sphere", "line"])
def test_labels_disjoint_across_tasks(layout):
    stream = generate_stream(StreamSpec(n_tasks=4, classes_per_task=3, mean_layout=layout, **SMALL), 0)
    flat = [c for task in stream.task_classes for c in task]
    assert sorted(flat) == list(range(12))
    assert all(len(t) == 3 for t in stream.task_classes)


def test_covariances_spd_and_heteroscedastic():
    stream = generate_stream(StreamSpec(n_tasks=1, classes_per_task=3, **SMALL), 1)
    for S in stream.covs:
        assert np.array_equal(S, S.T) and np.linalg.eigvalsh(S).min() > 0
    assert not np.allclose(stream.covs[0], stream.covs[1])


def test_bayes_oracle_two_unit_gaussians():
    spec = StreamSpec(
        n_tasks=1, classes_per_task=2, dim=2, mean_layout="line", mean_spacing=6.0,
        heteroscedastic=False, effective_rank=2, cov_floor=1.0,
    )
    stream = generate_stream(spec, 0)
    np.testing.assert_allclose(stream.means, [[-3, 0], [3, 0]])
    assert stream.bayes_accuracy == pytest.approx(norm.cdf(3.0), abs=1e-15)
    assert two_gaussian_bayes_accuracy(6.0) == pytest.approx(0.998650, abs=1e-6)


def test_drift_map_lipschitz_declarations():
    gen = np.random.default_rng(2)
    d = 6
    A = np.eye(d) + 0.1 * gen.standard_normal((d, d))
    W = gen.standard_normal((d, d))
    m = DriftMap("nonlinear", A=A, v=np.ones(d), W=W, eps=0.3)
    X, Y = gen.standard_normal((3000, d)), gen.standard_normal((3000, d))
    dist = np.linalg.norm(X - Y, axis=1)
    assert np.max(np.linalg.norm(m(X) - m(Y), axis=1) / dist) <= m.lipschitz + 1e-12
    disp = np.linalg.norm(m.displacement(X) - m.displacement(Y), axis=1) / dist
    assert np.max(disp) <= m.drift_lipschitz + 1e-12
    assert DriftMap("identity").drift_lipschitz == 0.0


def test_anchor_mixture_size():
    spec = StreamSpec(n_tasks=1, classes_per_task=2, n_anchors=100, anchor_overlap=0.3, **{k: v for k, v in SMALL.items() if k != "n_anchors"})
    assert generate_stream(spec, 0).draw_anchors().shape == (100, 8)


# ---------------------------------------------------------------- pipeline


def test_identity_drift_task_split_does_not_matter():
    one = StreamSpec(n_tasks=1, classes_per_task=20, **SMALL)
    two = StreamSpec(n_tasks=2, classes_per_task=10, **SMALL)
    a = run_pipeline(generate_stream(one, 3), "lrrgda", use_hopdc=False)
    b = run_pipeline(generate_stream(two, 3), "lrrgda", use_hopdc=False)
    assert a.last_accuracy == b.last_accuracy


def test_identity_drift_hopdc_is_near_noop():
    spec = StreamSpec(n_tasks=3, classes_per_task=4, **SMALL)
    stream = generate_stream(spec, 0)
    on = run_pipeline(stream, "rgda", use_hopdc=True)
    off = run_pipeline(stream, "rgda", use_hopdc=False)
    # only Monte-Carlo resampling of the old statistics differs
    assert abs(on.last_accuracy - off.last_accuracy) <= 0.01


def test_translation_drift_recovered_by_hopdc():
    base = dict(
        n_tasks=2, classes_per_task=3, dim=8, n_train=300, n_test=1000, mean_layout="line",
        mean_spacing=4.0, effective_rank=8, heteroscedastic=False, cov_floor=1.0, drift_magnitude=5.0,
    )
    cfg = PipelineConfig(params=RegularizationParams(rank=8))
    oracle = simulate(StreamSpec(**base, drift="identity"), "lrrgda", False, seeds=1, cfg=cfg)
    on = simulate(StreamSpec(**base, drift="translation"), "lrrgda", True, seeds=1, cfg=cfg)
    off = simulate(StreamSpec(**base, drift="translation"), "lrrgda", False, seeds=1, cfg=cfg)
    assert abs(on["last_mean"] - oracle["last_mean"]) <= 0.02
    assert oracle["last_mean"] - off["last_mean"] >= 0.20


def test_accuracy_ordering_heteroscedastic():
    spec = StreamSpec(
        n_tasks=1, classes_per_task=10, dim=16, n_train=1000, n_test=1000, mean_radius=2.0, effective_rank=4
    )
    cfg = PipelineConfig(params=RegularizationParams(rank=8))
    acc = {k: simulate(spec, k, False, seeds=3, cfg=cfg)["last_mean"] for k in ("rgda", "lrrgda", "lda")}
    assert acc["rgda"] >= acc["lrrgda"] - 0.01
    assert acc["lrrgda"] >= acc["lda"] - 0.01


def test_full_rank_lr_matches_joint_training():
    spec = StreamSpec(n_tasks=1, classes_per_task=6, **SMALL)
    cfg = PipelineConfig(params=RegularizationParams(rank=8))
    stream = generate_stream(spec, 1)
    lr = run_pipeline(stream, "lrrgda", False, cfg)
    rg = run_pipeline(stream, "rgda", False, cfg)
    assert lr.last_accuracy == rg.last_accuracy


def test_report_over_three_seeds():
    spec = StreamSpec(n_tasks=2, classes_per_task=3, **SMALL)
    rep = simulate(spec, "lda", True, seeds=3)
    assert rep["seeds"] == [0, 1, 2] and len(rep["runs"]) == 3
    last = [r["last_accuracy"] for r in rep["runs"]]
    inc = [r["inc_accuracy"] for r in rep["runs"]]
    assert rep["last_mean"] == pytest.approx(np.mean(last)) and rep["last_std"] == pytest.approx(np.std(last))
    assert rep["inc_mean"] == pytest.approx(np.mean(inc)) and rep["inc_std"] == pytest.approx(np.std(inc))
    for r in rep["runs"]:
        assert r["inc_accuracy"] == pytest.approx(np.mean(r["task_accuracy"]))
        assert "timing_s" not in r
    assert list(json.loads(report_json(rep))) == list(rep)


def test_simulate_report_bitwise_repeatable():
    spec = StreamSpec(n_tasks=2, classes_per_task=3, drift="linear", **SMALL)
    assert report_json(simulate(spec, "lrrgda", True, seeds=2)) == report_json(simulate(spec, "lrrgda", True, seeds=2))


def test_unknown_classifier_rejected():
    with pytest.raises(ValueError):
        run_pipeline(generate_stream(StreamSpec(n_tasks=1, classes_per_task=2, **SMALL), 0), "qda")
