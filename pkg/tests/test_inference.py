import json
import math

import numpy as np
import pytest

from synthetic import linear_groups, logistic_groups
from wamaudit import (
    BootstrapReport,
    ConfigError,
    Dataset,
    FitError,
    ModelSpec,
    analytic_linear_variance,
    bootstrap_audit,
    compute_wam_matrix,
    confidence_interval,
    fit_group_models,
    scalarize_sensitive,
)
from wamaudit.inference import (
    REPORT_COLUMNS,
    analytic_linear_table,
    default_pairs,
    resample_rng,
    run_bootstrap,
)


def test_ci_examples():
    lo, hi = confidence_interval(0.46, 0.05)
    assert round(lo, 3) == 0.362 and round(hi, 3) == 0.558
    assert confidence_interval(1.5, 0.0) == (1.5, 1.5)
    lo, hi = confidence_interval(0.0, 1.0)
    assert lo == pytest.approx(-1.96, abs=1e-3) and hi == pytest.approx(1.96, abs=1e-3)
    assert confidence_interval(0.0, 1.0, 0.99)[1] == pytest.approx(2.5758, abs=1e-4)


def test_ci_errors():
    with pytest.raises(ConfigError):
        confidence_interval(0.0, 1.0, 0.8)
    with pytest.raises(ConfigError):
        confidence_interval(0.0, -1.0)


def two_group(xa, ya, xb, yb):
    ds = Dataset.from_dict({"x": np.r_[xa, xb].astype(float), "y": np.r_[ya, yb].astype(float),
                            "g": ["a"] * len(xa) + ["b"] * len(xb)})
    gi = scalarize_sensitive(ds, ["g"], min_group_size=1)
    return ds, gi, fit_group_models(ds, gi, ["x"], "y", ModelSpec())


def test_perfect_fit_leaves_only_feature_term():
    xa = np.array([0.0, 1.0, 3.0, 4.0, 7.0])
    ds, gi, models = two_group(xa, 2 + 3 * xa, [1.0, 2, 5], [1.0, 0, 4])
    rep = analytic_linear_variance(models, ds, gi, "a", "a")
    assert rep.term_sampling_beta == pytest.approx(0.0, abs=1e-20)
    expected = 9 * np.var(xa, ddof=1) / 5
    assert rep.variance == pytest.approx(expected, rel=1e-10)


def test_p1_hand_example():
    # group i has x = (-1, 0, 1), group j is fitted exactly with slope 2 and mean x = 0
    xj = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    ds, gi, models = two_group([-1.0, 0.0, 1.0], [5.0, 1.0, 2.0], xj, 0.5 + 2 * xj)
    rep = analytic_linear_variance(models, ds, gi, "a", "b")
    assert rep.term_sampling_beta == pytest.approx(0.0, abs=1e-20)
    assert rep.variance == pytest.approx(4 * 1.0 / 3, rel=1e-12)
    assert rep.nu_hat == pytest.approx(0.5, abs=1e-12)


def test_first_term_closed_form():
    # slope-only check: sigma2_j/n_j + (A_i - xbar_j)^2 sigma2_j / Sxx_j
    rng = np.random.default_rng(2)
    xa, xb = rng.normal(1, 1, 30), rng.normal(-1, 2, 40)
    yb = 1 - xb + rng.normal(size=40)
    ds, gi, models = two_group(xa, rng.normal(size=30), xb, yb)
    rep = analytic_linear_variance(models, ds, gi, "a", "b")
    slope, icept = np.polyfit(xb, yb, 1)
    s2 = np.sum((yb - icept - slope * xb) ** 2) / 38
    sxx = np.sum((xb - xb.mean()) ** 2)
    first = s2 / 40 + (xa.mean() - xb.mean()) ** 2 * s2 / sxx
    assert rep.term_sampling_beta == pytest.approx(first, rel=1e-9)
    assert rep.term_sampling_A == pytest.approx(slope**2 * np.var(xa, ddof=1) / 30, rel=1e-9)
    assert rep.nu_hat == pytest.approx(icept + slope * xa.mean(), rel=1e-10)


def test_terms_nonnegative_and_sum():
    t = linear_groups(3, n=300, s=3, p=3)
    models = fit_group_models(t.ds, t.gi, t.features, "y", ModelSpec())
    wam = compute_wam_matrix(models, t.ds, t.gi)
    for rep in analytic_linear_table(models, t.ds, t.gi):
        assert rep.term_sampling_beta >= 0 and rep.term_sampling_A >= 0
        assert rep.variance == rep.term_sampling_beta + rep.term_sampling_A
        assert rep.std_error == math.sqrt(rep.variance)
        lo, hi = rep.ci95
        assert lo == pytest.approx(rep.nu_hat - 1.959963984540054 * rep.std_error, rel=1e-12)
        assert hi == pytest.approx(rep.nu_hat + 1.959963984540054 * rep.std_error, rel=1e-12)
        # closed form agrees with the averaged predictions
        i, j = t.gi.index(rep.act), t.gi.index(rep.cf)
        assert rep.nu_hat == pytest.approx(wam.values[i, j], abs=1e-8)


def test_analytic_rejects_non_linear():
    ds, gi, feats = logistic_groups(0, n=100)
    models = fit_group_models(ds, gi, feats, "y", ModelSpec("logistic"))
    with pytest.raises(FitError):
        analytic_linear_variance(models, ds, gi, 0, 1)


# --- bootstrap --------------------------------------------------------------


def test_bootstrap_deterministic_across_workers():
    t = linear_groups(1, n=60, s=3)
    a = bootstrap_audit(t.ds, t.gi, t.features, "y", ModelSpec(), 30, seed=7)
    b = bootstrap_audit(t.ds, t.gi, t.features, "y", ModelSpec(), 30, seed=7, n_jobs=4)
    assert a.to_csv() == b.to_csv()
    assert a == b
    c = bootstrap_audit(t.ds, t.gi, t.features, "y", ModelSpec(), 30, seed=8)
    assert c.to_csv() != a.to_csv()


def test_bootstrap_bias_identity_and_sign():
    t = linear_groups(2, n=80, s=3)
    rep = bootstrap_audit(t.ds, t.gi, t.features, "y", ModelSpec(), 50, seed=1)
    assert len(rep.rows) == 6
    for r in rep.rows:
        assert abs(r.bias - (r.myGrpEst - r.theirGrpEst)) < 1e-12
        assert min(r.myGrpSE, r.theirGrpSE, r.biasSE) >= 0
    # plug-in diagonal equals the group mean and the resample mean tracks it
    y = t.ds.numeric("y")
    for r in rep.rows:
        ybar = y[t.gi.row_ids[t.gi.index(r.act)]].mean()
        assert r.myGrpPlugin == pytest.approx(ybar, abs=1e-8)
        assert abs(r.myGrpEst - ybar) < 3 * r.myGrpSE


def test_bootstrap_constant_outcome():
    rng = np.random.default_rng(0)
    ds = Dataset.from_dict({"x": rng.normal(size=60), "y": [2.5] * 60,
                            "g": ["a"] * 30 + ["b"] * 30})
    gi = scalarize_sensitive(ds, ["g"])
    for kind in ("linear", "knn"):
        rep = bootstrap_audit(ds, gi, ["x"], "y", ModelSpec(kind, knn_k=3), 20, seed=3)
        for r in rep.rows:
            assert r.myGrpEst == r.theirGrpEst == 2.5
            assert r.myGrpSE == r.theirGrpSE == r.biasSE == 0.0
            assert r.bias == 0.0


def test_bootstrap_pairs_and_defaults():
    t = linear_groups(0, n=40, s=3)
    assert default_pairs(t.gi) == [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]
    rep = bootstrap_audit(t.ds, t.gi, t.features, "y", ModelSpec(), 10, pairs=[("g2", "g0")])
    assert [(r.act, r.cf) for r in rep.rows] == [("g2", "g0")]
    with pytest.raises(KeyError):
        rep.row("g0", "g1")


def test_bootstrap_requires_two_resamples():
    t = linear_groups(0, n=40)
    with pytest.raises(ConfigError):
        bootstrap_audit(t.ds, t.gi, t.features, "y", ModelSpec(), 1)


def test_discards_are_redrawn_and_counted():
    t = linear_groups(4, n=40)
    calls = {"n": 0}

    def flaky(models, ds, gi, cells):
        calls["n"] += 1
        # first call is the full-data fit
        bad = calls["n"] in (3, 6)
        return {c: math.nan if bad else 1.0 for c in cells}

    rep = run_bootstrap(t.ds, t.gi, t.features, "y", ModelSpec(), flaky, 20, seed=0)
    assert rep.n_discarded == 2


def test_discard_limit_raises():
    t = linear_groups(4, n=40)

    def always_bad(models, ds, gi, cells):
        if gi is t.gi:
            return {c: 0.0 for c in cells}
        return {c: math.nan for c in cells}

    with pytest.raises(FitError, match="discarded"):
        run_bootstrap(t.ds, t.gi, t.features, "y", ModelSpec(), always_bad, 20, seed=0)


def test_rank_deficient_resample_is_redrawn():
    # x and z differ on four rows per group; a resample missing all four of a
    # group's rows makes x and z collinear there and must be redrawn
    rng = np.random.default_rng(0)
    n = 25
    x = rng.normal(size=2 * n)
    z = x.copy()
    marked = [1, 5, 9, 13, 26, 30, 34, 38]
    z[marked] += 1.0
    ds = Dataset.from_dict({"x": x, "z": z, "y": x + rng.normal(size=2 * n),
                            "g": ["a"] * n + ["b"] * n})
    gi = scalarize_sensitive(ds, ["g"])
    rep = bootstrap_audit(ds, gi, ["x", "z"], "y", ModelSpec(), 200, seed=5)

    def collinear(boot):
        return any(not np.isin(ids, marked).any() for ids in boot.row_ids)

    expected = 0
    for r in range(200):
        attempt = 0
        while collinear(gi.resample(resample_rng(5, r, attempt))):
            attempt += 1
        expected += attempt
    assert expected >= 1
    assert rep.n_discarded == expected
    assert all(np.isfinite(r.theirGrpSE) for r in rep.rows)


def test_report_serialization():
    t = linear_groups(0, n=40)
    rep = bootstrap_audit(t.ds, t.gi, t.features, "y", ModelSpec(), 10, seed=2)
    lines = rep.to_csv().splitlines()
    assert lines[0] == "act,cf,myGrpEst,myGrpSE,theirGrpEst,theirGrpSE,bias,biasSE"
    assert all(len(ln.split(",")) == 8 for ln in lines)
    d = json.loads(json.dumps(rep.to_dict()))
    assert d["columns"] == list(REPORT_COLUMNS)
    assert BootstrapReport.from_dict(d) == rep
    assert d["seed"] == 2 and d["n_resamples"] == 10


def test_single_group_bootstrap():
    t = linear_groups(0, n=50, s=1)
    rep = bootstrap_audit(t.ds, t.gi, t.features, "y", ModelSpec(), 10)
    assert [(r.act, r.cf) for r in rep.rows] == [("g0", "g0")]
    assert rep.rows[0].bias == 0.0
