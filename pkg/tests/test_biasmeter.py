import csv
import json

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from auvit.biasmeter import (COMMON_AUS, bias_report, center_crop, cosine_distance, mean_au_vector, mean_image,
                             prepare_image, threshold_flag, write_report)
from auvit.dataio import AuVocabulary, DatasetManifest, SampleRecord
from auvit.errors import NoImage, NoSamples, ZeroVector
from auvit.synthetic import make_target

VOCAB = AuVocabulary.default()
CLASSES = ("happiness", "sadness", "fear")
nonneg = arrays(np.float64, 13, elements=st.floats(0, 1))


def manifest(name, rows, images=None):
    """``rows``: list of (expression, [active AU codes])."""
    records = []
    for i, (expr, aus) in enumerate(rows):
        vec = np.zeros(len(VOCAB))
        vec[VOCAB.positions(aus)] = 1.0
        image = images[i] if images is not None else np.zeros((3, 4, 4))
        records.append(SampleRecord(au_vector=vec, au_mask=np.ones(len(VOCAB)), dataset_tag=name,
                                    expr_label=CLASSES.index(expr), image=image))
    return DatasetManifest(name, "target", records, CLASSES, tuple(VOCAB), VOCAB)


# -- cosine distance -----------------------------------------------------------------

def test_distance_examples():
    e = np.eye(13)
    assert cosine_distance(e[2] * 0.4, e[2] * 0.4) == 0.0
    assert cosine_distance(e[0], e[5]) == 1.0
    assert cosine_distance(e[0] + e[1], e[0] + e[2]) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ZeroVector):
        cosine_distance(np.zeros(13), e[0])


@settings(max_examples=60, deadline=None)
@given(nonneg, nonneg, st.floats(1e-3, 1e3))
def test_distance_symmetry_scale_and_bounds(a, b, k):
    assume(np.linalg.norm(a) > 1e-6 and np.linalg.norm(b) > 1e-6)
    d = cosine_distance(a, b)
    assert d == cosine_distance(b, a)
    assert abs(cosine_distance(k * a, b) - d) < 1e-12
    assert 0.0 <= d <= 1.0


def test_threshold_flags():
    assert threshold_flag(0.29) == "similar"
    assert threshold_flag(0.3) == "neither"
    assert threshold_flag(0.5) == "neither"
    assert threshold_flag(0.51) == "different"


# -- mean AU vectors -------------------------------------------------------------------

def test_mean_vector_examples():
    m = manifest("d", [("happiness", ["AU12"])] * 3 + [("sadness", ["AU01"]), ("sadness", [])])
    happy = mean_au_vector(m, "happiness")
    np.testing.assert_array_equal(happy.vector, np.eye(13)[COMMON_AUS.index("AU12")])
    assert happy.support == 3
    sad = mean_au_vector(m, "sadness")
    assert sad.vector[COMMON_AUS.index("AU01")] == 0.5
    with pytest.raises(NoSamples):
        mean_au_vector(m, "fear")


def test_mean_vector_counting_oracle():
    rng = np.random.default_rng(0)
    codes = list(VOCAB)
    rows = [(CLASSES[rng.integers(3)], [c for c in codes if rng.random() < 0.3]) for _ in range(50)]
    m = manifest("d", rows)
    for expr in CLASSES:
        picked = [aus for e, aus in rows if e == expr]
        oracle = [sum(1.0 for aus in picked if code in aus) / len(picked) for code in COMMON_AUS]
        got = mean_au_vector(m, expr).vector
        assert np.max(np.abs(got - oracle)) <= 1e-12
        assert np.all((got >= 0) & (got <= 1))


# -- mean images -----------------------------------------------------------------------

def test_single_image_mean_is_that_image():
    img = np.random.default_rng(1).random((3, 112, 112))
    m = manifest("d", [("fear", ["AU01"])], images=[img])
    np.testing.assert_array_equal(mean_image(m, "fear"), img)


def test_complement_pair_gives_half():
    img = np.random.default_rng(2).random((3, 112, 112))
    m = manifest("d", [("fear", []), ("fear", [])], images=[img, 1.0 - img])
    np.testing.assert_allclose(mean_image(m, "fear"), 0.5, atol=1e-15)


def test_mean_image_accumulation_oracle():
    rng = np.random.default_rng(3)
    imgs = [rng.random((3, 20, 20)) for _ in range(10)]
    m = manifest("d", [("sadness", [])] * 10, images=imgs)
    got = mean_image(m, "sadness", canvas=(16, 16), crop_ratio=0.8)
    acc = np.zeros((3, 16, 16))
    for img in imgs:
        acc = acc + prepare_image(img, (16, 16), 0.8)
    np.testing.assert_allclose(got, acc / 10, atol=1e-12)
    assert got.min() >= 0.0 and got.max() <= 1.0


def test_center_crop_window():
    img = np.arange(3 * 10 * 10, dtype=float).reshape(3, 10, 10)
    np.testing.assert_array_equal(center_crop(img, 0.6), img[:, 2:8, 2:8])
    with pytest.raises(ValueError):
        center_crop(img, 0.0)


def test_mean_image_needs_pixels():
    m = manifest("d", [("fear", [])])
    m.records[0].image = None
    m.records[0].feature_map = np.zeros((2, 2, 2))
    with pytest.raises(NoImage):
        mean_image(m, "fear")


# -- reports ---------------------------------------------------------------------------

def test_identical_manifests_are_similar():
    m = make_target(30, classes=CLASSES, size=8, seed=0, with_aus=True)
    report = bias_report([m, m], with_images=False)
    for expr in report.expressions:
        np.testing.assert_array_equal(report.distances[expr], np.zeros((2, 2)))
        assert all(v["flag"] == "similar" for v in report.flags(expr).values())
    assert report.datasets == [f"{m.name}#0", f"{m.name}#1"]


def test_disjoint_fear_support_is_different():
    a = manifest("a", [("fear", ["AU01", "AU02"]), ("happiness", ["AU12"]), ("sadness", ["AU15"])])
    b = manifest("b", [("fear", ["AU04", "AU20"]), ("happiness", ["AU12"]), ("sadness", ["AU15"])])
    report = bias_report([a, b], with_images=False)
    assert report.distances["fear"][0, 1] == 1.0
    assert report.flags("fear")["a|b"] == {"distance": 1.0, "flag": "different"}
    assert report.distances["happiness"][0, 1] == 0.0


def test_matrices_symmetric_with_zero_diagonal():
    ms = [make_target(40, classes=CLASSES, size=8, seed=s, with_aus=True, name=f"d{s}") for s in range(4)]
    report = bias_report(ms, with_images=False)
    for mat in list(report.distances.values()) + [report.pooled]:
        np.testing.assert_array_equal(mat, mat.T)
        assert np.all(np.diag(mat) == 0)
        assert np.all((mat >= 0) & (mat <= 1))
    np.testing.assert_allclose(report.pooled, np.mean([report.distances[e] for e in CLASSES], axis=0))


def test_lab_style_auxiliary_is_farthest_from_target():
    # target and a web-style auxiliary share prototypes; the lab-style set shows
    # posed AU patterns with a different mix, echoing the qualitative ranking
    proto = {"happiness": ["AU06", "AU12", "AU25"], "sadness": ["AU01", "AU04", "AU15"],
             "fear": ["AU01", "AU02", "AU04", "AU20"]}
    lab = {"happiness": ["AU12", "AU10"], "sadness": ["AU17", "AU15"], "fear": ["AU05", "AU26", "AU20"]}
    rng = np.random.default_rng(4)

    def draw(name, table, n=40, keep=0.8):
        return manifest(name, [(e, [a for a in table[e] if rng.random() < keep]
                                + (["AU25"] if rng.random() < 0.1 else []))
                               for e in CLASSES for _ in range(n)])

    target, web, lab_set = draw("rafdb", proto), draw("ferplus", proto), draw("rafau", lab)
    report = bias_report([target, web, lab_set], with_images=False)
    row = report.pooled[0]
    assert row[2] > row[1]
    assert row.argmax() == 2


def test_report_files(tmp_path):
    a = make_target(12, classes=CLASSES, size=8, seed=0, with_aus=True, name="a")
    b = make_target(12, classes=CLASSES, size=8, seed=1, with_aus=True, name="b")
    written = write_report(bias_report([a, b], canvas=(16, 16)), tmp_path)
    doc = json.loads((tmp_path / "bias_report.json").read_text())
    assert set(doc["expressions"]) == set(CLASSES)
    assert (tmp_path / "mean_image_grid.png").exists()
    assert len(list((tmp_path / "mean_images").glob("*.png"))) == 6
    rows = list(csv.reader(open(tmp_path / "distance_pooled.csv")))
    assert rows[0] == ["", "a", "b"] and float(rows[1][1]) == 0.0
    assert len(written["csv"]) == 4


def test_report_needs_two_manifests():
    with pytest.raises(ValueError):
        bias_report([manifest("a", [("fear", ["AU01"])])])
