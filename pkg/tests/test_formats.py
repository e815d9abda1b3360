import struct

import numpy as np
import pytest

from analytic_cil.classifiers import (
    RegularizationParams,
    SgdConfig,
    build_lda,
    build_rgda,
    train_sgd_baseline,
)
from analytic_cil.errors import FormatError
from analytic_cil.formats import (
    HEADER_BYTES,
    dumps_gda,
    loads_gda,
    parse_csv,
    parse_fmx,
    read_features,
    storage_layout,
    storage_report,
    write_csv,
    write_fmx,
)
from analytic_cil.lr_rgda import build_lr_rgda
from analytic_cil.stats import FeatureMatrix, StatsRegistry


@pytest.fixture
def registry():
    gen = np.random.default_rng(0)
    reg = StatsRegistry(5)
    for c in (2, 7, 11):
        reg.update(gen.standard_normal((30, 5)) * (1 + c / 10) + c, np.full(30, c))
    return reg


# ---------------------------------------------------------------- FMX1 / CSV


def test_fmx_layout_by_hand(tmp_path):
    fm = FeatureMatrix(np.array([[1.5, -2.0]]), np.array([9]))
    write_fmx(tmp_path / "a.fmx", fm)
    raw = (tmp_path / "a.fmx").read_bytes()
    expected = (
        b"FMX1" + struct.pack("<IQII", 1, 1, 2, 0) + struct.pack("<dd", 1.5, -2.0) + struct.pack("<I", 9)
    )
    assert raw == expected
    assert HEADER_BYTES == 24


@pytest.mark.parametrize("labelled", [True, False])
def test_fmx_and_csv_roundtrip(tmp_path, labelled):
    gen = np.random.default_rng(1)
    data = gen.standard_normal((17, 4)) * 1e3
    labels = gen.integers(0, 5, 17) if labelled else None
    fm = FeatureMatrix(data, labels)
    write_fmx(tmp_path / "x.fmx", fm)
    write_csv(tmp_path / "x.csv", fm)
    for name in ("x.fmx", "x.csv"):
        back = read_features(tmp_path / name)
        assert np.array_equal(back.data, data)  # repr() round-trips float64 exactly
        if labelled:
            assert np.array_equal(back.labels, labels)
        else:
            assert back.labels is None


def test_fmx_errors_carry_offsets():
    good = b"FMX1" + struct.pack("<IQII", 0, 2, 1, 0) + struct.pack("<dd", 1.0, 2.0)
    assert parse_fmx(good).rows == 2
    cases = [
        (good[:10], 10),
        (b"XXXX" + good[4:], 0),
        (good[:-3], len(good) - 3),
        (good + b"\0", len(good)),
        (b"FMX1" + struct.pack("<IQII", 2, 0, 1, 0), 4),
    ]
    for buf, offset in cases:
        with pytest.raises(FormatError) as exc:
            parse_fmx(buf)
        assert exc.value.offset == offset
        assert "byte offset" in str(exc.value)


def test_csv_errors_carry_offsets():
    with pytest.raises(FormatError, match="zero rows"):
        parse_csv(b"")
    with pytest.raises(FormatError) as exc:
        parse_csv(b"label,f0\n1,2\n1,x\n")
    assert exc.value.offset == len(b"label,f0\n1,2\n")
    with pytest.raises(FormatError):
        parse_csv(b"label,f0\n1,2,3\n")
    with pytest.raises(FormatError):
        parse_csv(b"label,g0\n1,2\n")
    with pytest.raises(FormatError, match="non-negative integer"):
        parse_csv(b"label,f0\n1.5,2\n")


def test_csv_without_label_column():
    fm = parse_csv(b"f0,f1\n1,2\n3,4\n")
    assert fm.labels is None and fm.data.tolist() == [[1, 2], [3, 4]]


# ---------------------------------------------------------------- GDA1


def _roundtrip_scores(clf, X):
    back = loads_gda(dumps_gda(clf))
    assert np.array_equal(back.class_ids, clf.class_ids)
    return clf.scores(X), back.scores(X), back


def test_gda_stats_roundtrip(registry):
    back = loads_gda(dumps_gda(registry))
    assert back.class_ids == registry.class_ids
    for c in registry.class_ids:
        assert np.array_equal(back[c].mu, registry[c].mu)
        assert np.array_equal(back[c].sigma, registry[c].sigma)
        assert back[c].count == registry[c].count
    assert dumps_gda(back) == dumps_gda(registry)


@pytest.mark.parametrize("kind", ["LDA", "RGDA", "LRRGDA", "SGD"])
def test_gda_classifier_roundtrip(registry, kind):
    params = RegularizationParams(rank=3)
    if kind == "LDA":
        clf = build_lda(registry, params)
    elif kind == "RGDA":
        clf = build_rgda(registry, params)
    elif kind == "LRRGDA":
        clf = build_lr_rgda(registry, params)
    else:
        clf = train_sgd_baseline(registry, params, SgdConfig(t_base=50, patience=10))
    X = np.random.default_rng(2).standard_normal((20, 5)) * 5 + 5
    before, after, back = _roundtrip_scores(clf, X)
    if kind == "LRRGDA":
        # means are not stored; they come back as B @ w, equal up to rounding
        np.testing.assert_allclose(back.mu, clf.mu, atol=1e-9)
        np.testing.assert_allclose(after, before, rtol=0, atol=1e-12 * np.abs(before).max())
    else:
        np.testing.assert_array_equal(before, after)
    buf = dumps_gda(clf)
    assert len(buf) == storage_report(clf)["total_bytes"]
    assert dumps_gda(back) == buf


def test_gda_header_fields(registry):
    buf = dumps_gda(build_lr_rgda(registry, RegularizationParams(rank=2)))
    magic, version, kind, C, d, r, reserved = struct.unpack_from("<4sHHIIII", buf)
    assert (magic, version, kind, C, d, r, reserved) == (b"GDA1", 1, 3, 3, 5, 2, 0)
    assert struct.unpack_from("<3I", buf, 24) == (2, 7, 11)


def test_gda_rejects_corruption(registry):
    buf = dumps_gda(build_rgda(registry))
    for bad in (buf[:20], b"XXXX" + buf[4:], buf[:-8], buf + b"\0" * 8):
        with pytest.raises(FormatError):
            loads_gda(bad)
    bad_kind = buf[:6] + struct.pack("<H", 99) + buf[8:]
    with pytest.raises(FormatError, match="kind"):
        loads_gda(bad_kind)


# ---------------------------------------------------------------- storage layout


def test_storage_rgda_large():
    rep = storage_layout("RGDA", 1000, 768)
    assert rep["per_class_blocks"]["precision"] == 768**2 * 8 == 4_718_592
    assert rep["per_class_total_bytes"] > 4.5e9
    assert rep["total_bytes"] == pytest.approx(4.7e9, rel=0.01)


def test_storage_lr_rgda_large():
    rep = storage_layout("LRRGDA", 1000, 768, 64)
    per_class = 8 * (768 * 64 + 64**2 + 768 + 1)
    assert rep["per_class_bytes"] == per_class
    assert per_class == pytest.approx(0.43e6, rel=0.01)
    assert rep["per_class_total_bytes"] < 0.5e9
    assert rep["shared_bytes"] == 8 * (4 + 2 * 768**2)


def test_storage_lda_and_sgd():
    C, d = 100, 64
    lda = storage_layout("LDA", C, d)
    assert lda["per_class_total_bytes"] + lda["shared_bytes"] == C * (d + 1) * 8 + d * d * 8
    assert storage_layout("sgd", C, d)["shared_bytes"] == 0
    with pytest.raises(ValueError):
        storage_layout("QDA", 1, 1)
