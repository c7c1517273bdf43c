from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wtamem.activation import fixed_c, fixed_l
from wtamem.analysis.corruption import (KINDS, NOISE_HEADER, SEVERITY_PARAMS, CorruptionSpec,
                                        NoiseReport, corrupt, noise_eval)
from wtamem.analysis.fewshot import (FewShotConfig, NearestClassMean, confidence_interval,
                                     extract_features, features_by_class, ncm_fewshot)
from wtamem.analysis.opcount import (count_multiplications, fit_cost_law, law_residuals, sweep,
                                     write_count_csv)
from wtamem.analysis.winstats import (PLOT_HEADER, LayerWins, WinStats, profile_divergence,
                                      trace_wins, win_statistics)
from wtamem.data import make_synthetic
from wtamem.model import Model, ModelConfig, TraceEntry, build

ELLS = (1, 2, 4, 8, 16, 32, 64)
# published multiplication counts per input for ell = 1..64
REFERENCE_RESNET18_COUNTS = (5070848, 3125248, 2152448, 1666048, 1422848, 1301248, 1240448)
REFERENCE_RESNET50_COUNTS = (1297809408, 861601792, 643497984, 534446080, 479920128, 452657152,
                             439025664)


# -- operation counts -----------------------------------------------------------
@pytest.mark.parametrize("counts,A,B", [(REFERENCE_RESNET18_COUNTS, 1179648, 3891200),
                                        (REFERENCE_RESNET50_COUNTS, 425394176, 872415232)])
def test_reference_counts_follow_law(counts, A, B):
    points = dict(zip(ELLS, counts))
    fa, fb = fit_cost_law(points)
    assert (fa, fb) == (A, B)
    assert all(r == 0 for r in law_residuals(points, fa, fb).values())


def test_hand_counted_toy():
    model = Model(ModelConfig(widths=(4, 8), stem_stride=2, mode="anneal", group=fixed_l(2)))
    stem = 16 * 16 * 4 * 3 * 9      # reads the raw image
    down = 8 * 8 * 8 * 4 * 9        # fed by the stem activation
    head = 8 * 10                   # reads pooled, hence dense, features
    for ell in (1, 2, 4):
        rep = count_multiplications(model.layers, fixed_l(ell))
        assert rep.total == stem + head + Fraction(down, ell)
        assert rep.dense_part == stem + head and rep.sparse_part == down


@pytest.mark.parametrize("config", [
    ModelConfig(architecture="resnet18", mode="anneal"),
    ModelConfig(architecture="resnet18", mode="anneal", replace_policy="no_post_add"),
    ModelConfig(widths=(64, 128, 256), blocks=2, mode="anneal"),
])
def test_counter_law_is_exact(config):
    model = Model(config)
    results = dict(sweep(model.layers, ELLS))
    assert results[1].total == results[1].dense_total
    points = {ell: rep.total for ell, rep in results.items()}
    A, B = fit_cost_law(points)
    assert all(r == 0 for r in law_residuals(points, A, B).values())
    assert all(rep.total.denominator == 1 for rep in results.values())


def test_no_post_add_makes_following_convs_dense():
    full = Model(ModelConfig(architecture="resnet18", mode="anneal"))
    partial = Model(ModelConfig(architecture="resnet18", mode="anneal", replace_policy="no_post_add"))
    a = count_multiplications(full.layers, fixed_l(4))
    b = count_multiplications(partial.layers, fixed_l(4))
    assert b.dense_part > a.dense_part and b.total > a.total
    conv1 = {r.name: r for r in b.rows}["layer2.0.conv1"]
    assert conv1.sparsity == 1


def test_fixed_c_counts_use_layer_group_length():
    model = Model(ModelConfig(widths=(8, 16), mode="anneal", group=fixed_c(2)))
    rep = count_multiplications(model.layers, fixed_c(2))
    rows = {r.name: r for r in rep.rows}
    assert rows["stage1.down.conv"].sparsity == Fraction(1, 4)
    assert rows["fc"].sparsity == 1


def test_count_csv(tmp_path):
    model = Model(ModelConfig(mode="anneal"))
    write_count_csv(tmp_path / "c.csv", sweep(model.layers, (1, 2)))
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "ell,total,dense_part,sparse_part" and len(lines) == 3


# -- win statistics -------------------------------------------------------------
def test_dominant_channel_wins_everywhere():
    pre = np.random.default_rng(0).uniform(0.1, 1.0, (3, 8, 4, 4))
    pre[:, ::4] += 5.0
    out = np.where(np.arange(8)[None, :, None, None] % 4 == 0, pre, 0.0)
    lw = trace_wins(TraceEntry("x", out, pre, 4))
    assert lw.proportions.tolist() == [[1.0, 0.0, 0.0, 0.0]] * 2
    assert lw.blank.tolist() == [0, 0]


@pytest.mark.parametrize("spec", [fixed_l(2), fixed_l(4), fixed_c(1)])
def test_proportions_partition_each_group(spec):
    model = build(ModelConfig(blocks=1, mode="wta", group=spec), seed=1)
    stats = win_statistics(model, make_synthetic(40, seed=2).images, batch_size=16)
    for lw in stats.layers.values():
        totals = lw.wins.sum(axis=1) + lw.blank
        assert all(Fraction(int(t), lw.positions) == 1 for t in totals)
        assert (lw.proportions.sum(axis=1) <= 1 + 1e-12).all()


def test_class_filter_and_batching():
    model = build(ModelConfig(mode="wta", group=fixed_l(2)), seed=1)
    data = make_synthetic(60, seed=3)
    a = win_statistics(model, data.images, data.labels, classes=[1, 2], batch_size=7)
    keep = np.isin(data.labels, [1, 2])
    b = win_statistics(model, data.images[keep], batch_size=100)
    for name in a.layers:
        assert np.array_equal(a.layers[name].wins, b.layers[name].wins)
        assert a.layers[name].positions == b.layers[name].positions


def test_profile_divergence_bounds():
    a = WinStats({"l": LayerWins(np.array([[3, 1]]), np.array([0]), 4)})
    b = WinStats({"l": LayerWins(np.array([[0, 0]]), np.array([4]), 4)})
    assert profile_divergence(a, a, "l") == 0.0
    assert profile_divergence(a, b, "l") == 2.0


def test_plot_data_file(tmp_path):
    model = build(ModelConfig(mode="wta", group=fixed_l(4)), seed=1)
    stats = win_statistics(model, make_synthetic(10, seed=4).images)
    stats.write_plot_data(tmp_path / "w.csv")
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0].split(",") == PLOT_HEADER
    assert len(lines) - 1 == sum(s.channels for s in model.sites)


# -- corruptions ----------------------------------------------------------------
def test_severity_tables():
    assert SEVERITY_PARAMS["gaussian"][1:] == (0.08, 0.12, 0.18, 0.26, 0.38)
    assert SEVERITY_PARAMS["shot"][1:] == (60.0, 25.0, 12.0, 5.0, 3.0)
    assert SEVERITY_PARAMS["impulse"][1:] == (0.03, 0.06, 0.09, 0.17, 0.27)
    with pytest.raises(ValueError):
        CorruptionSpec("blur", 1)
    with pytest.raises(ValueError):
        CorruptionSpec("shot", 6)


def test_impulse_mask_recount():
    rng = np.random.default_rng(0)
    imgs = rng.integers(1, 255, (5, 3, 32, 32), dtype=np.uint8)   # no value already 0 or 255
    for sev in range(1, 6):
        out = corrupt(imgs, CorruptionSpec("impulse", sev, seed=1))
        p = SEVERITY_PARAMS["impulse"][sev]
        changed = (out != imgs).reshape(5, -1).sum(axis=1)
        assert (changed == round(p * 3072)).all()
        assert np.isin(out[out != imgs], (0, 255)).all()


@pytest.mark.parametrize("kind", KINDS)
def test_corrupt_contract(kind):
    imgs = make_synthetic(6, seed=5).images
    assert np.array_equal(corrupt(imgs, CorruptionSpec(kind, 0)), imgs)
    a = corrupt(imgs, CorruptionSpec(kind, 3, seed=2))
    b = corrupt(imgs, CorruptionSpec(kind, 3, seed=2))
    c = corrupt(imgs, CorruptionSpec(kind, 3, seed=3))
    assert a.dtype == np.uint8 and a.shape == imgs.shape
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert not np.array_equal(a, imgs)


def test_gaussian_small_sigma_is_identity():
    from wtamem.analysis import corruption
    imgs = make_synthetic(4, seed=6).images
    saved = corruption.SEVERITY_PARAMS["gaussian"]
    corruption.SEVERITY_PARAMS["gaussian"] = (0.0, 1e-6, 0.12, 0.18, 0.26, 0.38)
    try:
        assert np.array_equal(corrupt(imgs, CorruptionSpec("gaussian", 1)), imgs)
    finally:
        corruption.SEVERITY_PARAMS["gaussian"] = saved


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(KINDS), st.integers(0, 5), st.integers(0, 2 ** 31))
def test_corruption_stays_in_range(kind, sev, seed):
    imgs = np.random.default_rng(seed).integers(0, 256, (2, 3, 8, 8), dtype=np.uint8)
    out = corrupt(imgs, CorruptionSpec(kind, sev, seed))
    assert out.dtype == np.uint8 and out.shape == imgs.shape


def test_noise_eval_zero_severity_matches_clean():
    model = build(ModelConfig(widths=(4, 8), mode="wta", group=fixed_l(2)), seed=0)
    data = make_synthetic(50, seed=7)
    rep = noise_eval(model, data, severities=(0, 1), seed=0)
    for kind in KINDS:
        assert rep.detail[(kind, 0)] == rep.clean
    assert list(rep.row()) == NOISE_HEADER


def test_noise_report_csv(tmp_path):
    rep = NoiseReport(0.9, {("gaussian", 1): 0.8, ("gaussian", 2): 0.6, ("shot", 1): 0.7,
                            ("impulse", 1): 0.5})
    assert rep.mean("gaussian") == pytest.approx(0.7)
    rep.write_csv(tmp_path / "n.csv")
    assert (tmp_path / "n.csv").read_text() == "clean,gaussian,shot,impulse\n0.900000,0.700000,0.700000,0.500000\n"


# -- few-shot -------------------------------------------------------------------
SMALL_FS = FewShotConfig(n_way=5, k_shot=5, queries_per_class=15, runs=400, pool_size=20, seed=0)


def test_constant_class_vectors_are_perfect():
    feats = {k: np.tile(np.eye(20)[k] * 3, (20, 1)) for k in range(20)}
    acc, ci = ncm_fewshot(feats, SMALL_FS)
    assert acc == 1.0 and ci == 0.0


def test_shared_distribution_is_chance():
    rng = np.random.default_rng(1)
    feats = [rng.normal(size=(40, 16)) for _ in range(20)]
    acc, ci = ncm_fewshot(feats, SMALL_FS)
    assert abs(acc - 0.2) <= 3 * ci


def test_confidence_interval_closed_form():
    mean, half = confidence_interval([0.8, 0.9])
    assert mean == pytest.approx(0.85)
    assert half == pytest.approx(1.96 * 0.05 / np.sqrt(2)) and round(half, 4) == 0.0693


def test_orthogonal_invariance():
    rng = np.random.default_rng(2)
    centers = rng.normal(size=(20, 12))
    feats = [c + 0.8 * rng.normal(size=(25, 12)) for c in centers]
    q, _ = np.linalg.qr(rng.normal(size=(12, 12)))
    a = ncm_fewshot(feats, SMALL_FS)
    b = ncm_fewshot([f @ q for f in feats], SMALL_FS)
    assert abs(a[0] - b[0]) < 1e-5 and abs(a[1] - b[1]) < 1e-5


def test_insufficient_examples():
    feats = [np.zeros((10, 3))] * 20
    with pytest.raises(ValueError):
        ncm_fewshot(feats, SMALL_FS)
    with pytest.raises(ValueError):
        ncm_fewshot(feats[:5], SMALL_FS)


def test_nearest_class_mean_estimator():
    X = np.array([[0.0, 0.0], [0.2, 0.0], [5.0, 5.0], [5.2, 5.0]])
    y = np.array(["a", "a", "b", "b"])
    clf = NearestClassMean().fit(X, y)
    assert clf.predict([[0.1, 0.3], [4.0, 4.0]]).tolist() == ["a", "b"]
    assert clf.score(X, y) == 1.0
    assert NearestClassMean(normalize=True).fit(X[1:], y[1:]).means_.shape == (2, 2)


def test_extract_features():
    model = build(ModelConfig(widths=(4, 8), mode="wta", group=fixed_l(2)), seed=0)
    imgs = make_synthetic(12, seed=8).images
    f = extract_features(model, imgs)
    assert f.shape == (12, 8)
    assert np.array_equal(f, extract_features(model, imgs, batch_size=5))
    g = extract_features(model, imgs, normalize=True)
    np.testing.assert_allclose(np.linalg.norm(g, axis=1), 1.0, atol=1e-6)
    by = features_by_class(f, make_synthetic(12, seed=8).labels)
    assert sum(len(v) for v in by.values()) == 12
