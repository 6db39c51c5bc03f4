"""ROC/EER/AUC against a brute-force oracle, pair protocol, quality scores and reports."""

from __future__ import annotations

import json
import os
import stat

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import small_net
from oracles import roc_brute_force
from fpdeblur.dataops import BlurConfig, GrayImage, gaussian_blur, synth_fingerprint
from fpdeblur.evaluation import (
    EvaluationError,
    MatchScore,
    ReportRow,
    RocResult,
    build_pairs,
    compute_roc,
    emit_report,
    evaluate_variant,
    parse_quality_output,
    proxy_quality,
    quality_report,
    render_table,
    roc_csv,
    roc_from_arrays,
    roc_from_json,
    roc_to_json,
    score_pairs,
)
from fpdeblur.networks import init_params
from fpdeblur.training import load_split

# Reference EER and AUC values per blur level, used purely as a layout fixture
REFERENCE_VALUES = {
    3: ((0.2714, 0.8054), (0.1024, 0.9607)),
    5: ((0.4800, 0.5279), (0.1200, 0.9518)),
    7: ((0.5450, 0.4952), (0.2242, 0.8642)),
}

REFERENCE_MD = """| σ | Data | EER | AUC |
|---|---|---|---|
| 3 | w/o deblurring | 0.2714 | 0.8054 |
|  | w/ deblurring | 0.1024 | 0.9607 |
| 5 | w/o deblurring | 0.4800 | 0.5279 |
|  | w/ deblurring | 0.1200 | 0.9518 |
| 7 | w/o deblurring | 0.5450 | 0.4952 |
|  | w/ deblurring | 0.2242 | 0.8642 |
"""


def reference_rows():
    rows = []
    for sigma, (blur, deb) in REFERENCE_VALUES.items():
        rows.append(ReportRow(str(sigma), "w/o deblurring", RocResult.summary_only(*blur)))
        rows.append(ReportRow(str(sigma), "w/ deblurring", RocResult.summary_only(*deb)))
    return rows


scores_st = st.lists(st.integers(-6, 6), min_size=1, max_size=30)


# ---------------------------------------------------------------- ROC examples and oracle

def test_perfect_separation():
    r = roc_from_arrays([0.9, 0.8], [0.2, 0.1])
    assert r.eer == 0.0 and r.auc == 1.0


def test_identical_multisets_give_half_auc(rng):
    s = rng.normal(size=40)
    r = roc_from_arrays(s, s.copy())
    assert abs(r.auc - 0.5) <= 1e-9


def test_fully_inverted_scores():
    r = roc_from_arrays([0.1, 0.2], [0.8, 0.9])
    assert r.eer == 1.0 and r.auc == 0.0


def test_single_class_rejected():
    with pytest.raises(EvaluationError):
        compute_roc([MatchScore("a", "a", 1.0, True)])
    with pytest.raises(EvaluationError):
        roc_from_arrays([1.0], [float("nan")])


def test_sixty_random_scores_match_oracle(rng):
    for _ in range(20):
        gen, imp = rng.normal(1.0, 1.0, 30), rng.normal(0.0, 1.0, 30)
        r = roc_from_arrays(gen, imp)
        eer, auc = roc_brute_force(gen, imp)
        assert abs(r.eer - eer) <= 1e-9 and abs(r.auc - auc) <= 1e-9


@settings(max_examples=150, deadline=None)
@given(scores_st, scores_st)
def test_roc_matches_oracle_with_ties(gen, imp):
    r = roc_from_arrays(gen, imp)
    eer, auc = roc_brute_force(gen, imp)
    assert abs(r.eer - eer) <= 1e-9
    assert abs(r.auc - auc) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(scores_st, scores_st)
def test_roc_invariants(gen, imp):
    r = roc_from_arrays(gen, imp)
    assert np.all(np.diff(r.tar) <= 0) and np.all(np.diff(r.far) <= 0)
    assert np.all(np.diff(r.thresholds) > 0)
    assert 0 <= r.eer <= 1 and 0 <= r.auc <= 1
    assert r.tar[-1] == 0 and r.far[-1] == 0 and r.tar[0] == 1 and r.far[0] == 1


@settings(max_examples=100, deadline=None)
@given(scores_st, scores_st)
def test_eer_invariant_under_monotone_transform(gen, imp):
    f = lambda x: np.exp(0.3 * np.asarray(x, dtype=float)) * 7 - 2  # noqa: E731
    a, b = roc_from_arrays(gen, imp), roc_from_arrays(f(gen), f(imp))
    assert abs(a.eer - b.eer) <= 1e-12 and abs(a.auc - b.auc) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(scores_st, scores_st)
def test_label_swap_complements_auc(gen, imp):
    assert abs(roc_from_arrays(gen, imp).auc + roc_from_arrays(imp, gen).auc - 1.0) <= 1e-9


def test_compute_roc_uses_genuine_flags():
    scores = [MatchScore("a", "a", 0.9, True), MatchScore("a", "b", 0.1, False),
              MatchScore("b", "b", 0.4, True), MatchScore("b", "a", 0.5, False)]
    r = compute_roc(scores)
    eer, auc = roc_brute_force([0.9, 0.4], [0.1, 0.5])
    assert (r.eer, r.auc) == pytest.approx((eer, auc), abs=1e-12)


def test_roc_json_roundtrip():
    r = roc_from_arrays([3, 1, 2], [0, 1])
    back = roc_from_json(json.loads(json.dumps(roc_to_json(r))))
    assert back.eer == r.eer and np.array_equal(back.far, r.far) and np.array_equal(back.thresholds, r.thresholds)
    with pytest.raises(EvaluationError):
        roc_from_json({"auc": 1})


# ---------------------------------------------------------------- scoring and pairs

@pytest.fixture(scope="module")
def verifier():
    return init_params("verifier", small_net(), seed=0)


def _imgs(n, seed):
    return torch.rand(n, 1, 32, 32, generator=torch.Generator().manual_seed(seed))


def test_score_pairs_counts_and_self_match(verifier):
    x = _imgs(3, 0)
    scores = score_pairs(verifier, x, x.clone(), ["a", "b", "c"])
    assert len(scores) == 9
    for s in scores:
        assert s.genuine == (s.subject_a == s.subject_b)
        if s.genuine:
            assert s.score == 0.0
            assert s.score == max(t.score for t in scores)
    assert len(score_pairs(verifier, _imgs(2, 1), _imgs(4, 2), ["a", "b"], ["a", "b", "c", "d"])) == 8


def test_score_pairs_symmetric(verifier):
    p, g = _imgs(2, 3), _imgs(3, 4)
    ab = score_pairs(verifier, p, g, ["a", "b"], ["a", "c", "d"])
    ba = score_pairs(verifier, g, p, ["a", "c", "d"], ["a", "b"])
    ab_map = {(i, j): s.score for (i, j), s in zip(((i, j) for i in range(2) for j in range(3)), ab)}
    ba_map = {(j, i): s.score for (i, j), s in zip(((i, j) for i in range(3) for j in range(2)), ba)}
    for key, value in ab_map.items():
        assert abs(value - ba_map[key]) <= 1e-6


def test_score_pairs_errors(verifier):
    with pytest.raises(EvaluationError):
        score_pairs(verifier, _imgs(2, 0), _imgs(2, 0), ["a"])
    with pytest.raises(EvaluationError):
        score_pairs(verifier, _imgs(2, 0), _imgs(2, 0), ["a", "a"])


def test_build_pairs_protocol():
    probe = ["a", "a", "b", "b", "c"]
    gallery = ["a", "b", "c", "d"]
    pl = build_pairs(probe, gallery, seed=3)
    gen = [(int(i), int(j)) for i, j, g in zip(pl.probe, pl.gallery, pl.genuine) if g]
    imp = [(int(i), int(j)) for i, j, g in zip(pl.probe, pl.gallery, pl.genuine) if not g]
    assert sorted(gen) == [(0, 0), (1, 0), (2, 1), (3, 1), (4, 2)]
    assert len(imp) == len(gen) == len(set(imp))
    assert all(probe[i] != gallery[j] for i, j in imp)
    assert build_pairs(probe, gallery, 3).digest() == pl.digest()
    assert build_pairs(probe, gallery, 4).digest() != pl.digest()
    with pytest.raises(EvaluationError):
        build_pairs(["a"], ["a"], 0)


def test_evaluate_variant_shared_pairs_and_upper_bound(tiny_manifest, verifier):
    g = init_params("generator", small_net(), seed=0)
    ev = evaluate_variant(g, verifier, tiny_manifest, "train", 5.0, seed=1)
    assert ev.n_genuine == ev.n_impostor > 0
    blur = [(s.subject_a, s.subject_b, s.genuine) for s in ev.scores["blurred"]]
    deb = [(s.subject_a, s.subject_b, s.genuine) for s in ev.scores["deblurred"]]
    assert blur == deb
    probes = load_split(tiny_manifest, "train", 5.0)
    upper = evaluate_variant(None, verifier, tiny_manifest, "train", 5.0, seed=1,
                             deblurred_override=probes.clean)
    assert upper.pair_hash == ev.pair_hash
    # a clean probe matches its own gallery copy exactly, so genuine scores include the maximum 0
    assert max(s.score for s in upper.scores["deblurred"] if s.genuine) == 0.0
    with pytest.raises(EvaluationError):
        evaluate_variant(g, verifier, tiny_manifest, "train", 3.0)
    with pytest.raises(EvaluationError):
        evaluate_variant(None, verifier, tiny_manifest, "train", 5.0)


# ---------------------------------------------------------------- quality

def test_proxy_floor_and_range():
    assert proxy_quality(GrayImage(np.zeros((64, 64)))) == 1
    img, _ = synth_fingerprint(3, 128)
    assert 1 <= proxy_quality(img) <= 100


def test_proxy_does_not_increase_under_blur():
    for seed in range(20):
        img, _ = synth_fingerprint(seed, 128)
        blurred = gaussian_blur(img, BlurConfig.from_sigma(5.0))
        assert proxy_quality(blurred) <= proxy_quality(img), seed


def test_parse_quality_output():
    assert parse_quality_output("87\n") == 87
    assert parse_quality_output("score: 42") == 42
    for bad in ("", "0", "101"):
        with pytest.raises(EvaluationError):
            parse_quality_output(bad)


def _script(path, body):
    path.write_text("#!/bin/sh\n" + body + "\n")
    path.chmod(path.stat().st_mode | stat.S_IEXEC)
    return str(path)


@pytest.mark.skipif(os.name != "posix", reason="shell script tool")
def test_external_tool_and_fallback(tmp_path):
    img, _ = synth_fingerprint(1, 128)
    good = _script(tmp_path / "good.sh", 'test -f "$1" && echo 87')
    out = quality_report({"x": img}, good)
    assert out[0].score == 87 and out[0].source == "external" and not out[0].warning
    bad = _script(tmp_path / "bad.sh", "exit 3")
    out = quality_report({"x": img}, bad)
    assert out[0].source == "proxy" and out[0].warning
    assert out[0].score == proxy_quality(img)
    out = quality_report({"x": img}, str(tmp_path / "missing"))
    assert out[0].source == "proxy" and "failed" in out[0].warning
    loud = _script(tmp_path / "loud.sh", "echo 150")
    assert quality_report({"x": img}, loud)[0].source == "proxy"


# ---------------------------------------------------------------- reports

def test_reference_layout_exact():
    assert render_table(reference_rows(), "sigma") == REFERENCE_MD


def test_model_layout():
    rows = [ReportRow("Plain cGAN model", "", RocResult.summary_only(0.3, 0.7)),
            ReportRow("Proposed deblurring model", "", RocResult.summary_only(0.1, 0.95))]
    assert render_table(rows, "model") == (
        "| Model | EER | AUC |\n|---|---|---|\n| Plain cGAN model | 0.3000 | 0.7000 |\n"
        "| Proposed deblurring model | 0.1000 | 0.9500 |\n")
    with pytest.raises(EvaluationError):
        render_table(rows, "bogus")


def test_emit_report_deterministic(tmp_path):
    rows = [ReportRow("5", "w/o deblurring", roc_from_arrays([0.1, 0.5, 0.7], [0.2, 0.3])),
            ReportRow("5", "w/ deblurring", roc_from_arrays([0.6, 0.5, 0.9], [0.2, 0.3]))]
    a = emit_report(rows, tmp_path / "a", meta={"seed": 0})
    b = emit_report(rows, tmp_path / "b", meta={"seed": 0})
    assert set(a) == set(b) == {"report", "roc_sigma5_w_o_deblurring", "roc_sigma5_w_deblurring", "plot", "meta"}
    for key in a:
        assert a[key].read_bytes() == b[key].read_bytes(), key
    lines = a["roc_sigma5_w_o_deblurring"].read_text().splitlines()
    assert lines[0] == "threshold,far,tar"
    assert len(lines) - 1 == rows[0].roc.thresholds.size
    assert a["plot"].read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert roc_csv(rows[0].roc) == a["roc_sigma5_w_o_deblurring"].read_text()


def test_emit_report_errors(tmp_path):
    with pytest.raises(EvaluationError):
        emit_report([], tmp_path)
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(EvaluationError):
        emit_report(reference_rows(), blocker / "sub")
