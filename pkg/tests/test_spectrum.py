import math
import warnings

import numpy as np
import pytest

from oodspectrum.errors import DomainError, MissingReference, TooFewPoints
from oodspectrum.ingest import StudyConfig
from oodspectrum.spectrum import (
    aicc,
    assign_regimes,
    bic,
    build_spectrum,
    fit_gmm_1d,
    regime_labels,
    run_em,
    select_model,
)


def _clusters(seed, means=(0.0, -4.0, -8.0, -12.0), sd=0.5, n=65):
    gen = np.random.default_rng(seed)
    return np.concatenate([gen.normal(m, sd, n) for m in means])


def test_single_component_is_moments():
    x = np.random.default_rng(0).normal(2, 3, 200)
    fit = fit_gmm_1d(x, 1)
    assert fit.means[0] == pytest.approx(x.mean())
    assert fit.variances[0] == pytest.approx(x.var())
    assert fit.converged


def test_two_clusters():
    x = _clusters(1, means=(0.0, -10.0), n=100)
    fit = fit_gmm_1d(x, 2)
    assert fit.means[0] == pytest.approx(0, abs=0.2) and fit.means[1] == pytest.approx(-10, abs=0.2)
    assert fit.weights.sum() == pytest.approx(1, abs=1e-9)
    assert np.all(np.diff(fit.means) < 0)


def test_constant_data_hits_floor():
    fit = fit_gmm_1d([3.0] * 20, 2)
    assert np.all(fit.variances >= fit.variance_floor)
    assert np.all(np.isfinite(fit.means))


def test_likelihood_monotone():
    fit = fit_gmm_1d(_clusters(2), 4)
    assert np.all(np.diff(fit.ll_history) >= -1e-9 * np.abs(fit.ll_history[1:]))


def test_restart_determinism():
    x = _clusters(3)
    a, b = fit_gmm_1d(x, 4, seed=5), fit_gmm_1d(x, 4, seed=5)
    assert a.log_likelihood == b.log_likelihood and np.array_equal(a.means, b.means)


def test_more_restarts_never_worse():
    x = _clusters(4)
    assert fit_gmm_1d(x, 4, restarts=10).log_likelihood >= fit_gmm_1d(x, 4, restarts=1).log_likelihood - 1e-9


def test_bad_inputs():
    with pytest.raises(DomainError):
        fit_gmm_1d([1.0, np.nan, 2.0], 1)
    with pytest.raises(DomainError):
        fit_gmm_1d([1.0], 2)


def test_criteria_formulas():
    assert bic(-10.0, 5, 100) == pytest.approx(5 * math.log(100) + 20)
    assert aicc(-10.0, 5, 100) == pytest.approx(10 + 20 + 60 / 94)
    assert aicc(-10.0, 5, 6) is None


def test_selection_picks_four_by_bic():
    sel = select_model(_clusters(5))
    assert sel.best_bic_k == 4
    for cand in sel.candidates:
        assert cand.bic == pytest.approx(bic(cand.fit.log_likelihood, 3 * cand.k - 1, 260))


def test_aicc_skip_warns():
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        sel = select_model(np.linspace(0, 1, 8), range(1, 4))
    assert any("AICc undefined" in str(w.message) for w in rec)
    assert sel.best_bic_k in (1, 2, 3)


def test_regime_labels():
    assert regime_labels(4) == ("reference", "near-OOD", "far-OOD", "extreme-OOD")
    assert regime_labels(1) == ("regime_1",)


def test_assignment_and_boundaries():
    x = _clusters(6)
    fit = fit_gmm_1d(x, 4)
    ra = assign_regimes(fit, {"a": 0.1, "b": -4.2, "c": -7.7, "d": -12.5})
    assert ra.assignment == {"a": "reference", "b": "near-OOD", "c": "far-OOD", "d": "extreme-OOD"}
    assert len(ra.boundaries) == 3
    assert all(fit.means[j + 1] < ra.boundaries[j] < fit.means[j] for j in range(3))


def test_pipeline_spectrum(pipeline_sets, pipeline_config):
    sp = build_spectrum(pipeline_sets.values(), pipeline_config)
    assert sp.selection.best_bic_k == 4
    extreme = set(sp.assignment.members("extreme-OOD"))
    assert extreme == {c for c in sp.assignment.assignment if c.endswith(("_c01", "_0.45", "_40", "_180", "_0.90"))
                       and not c.startswith("rotation")}
    assert len(sp.reference) == 28
    d = sp.to_dict()
    assert len(d["conditions"]) == 32


def test_missing_reference(pipeline_sets):
    with pytest.raises(MissingReference):
        build_spectrum(pipeline_sets.values(), StudyConfig())


def test_single_component_labels(pipeline_sets, pipeline_config):
    sp = build_spectrum(pipeline_sets.values(), pipeline_config, k_range=range(1, 2))
    assert set(sp.assignment.assignment.values()) == {"regime_1"}


def test_em_batched_matches_single():
    x = _clusters(7)
    w = np.full((2, 4), 0.25)
    m = np.array([[1.0, -3, -7, -11], [0.5, -4, -9, -13]])
    v = np.ones((2, 4))
    both = run_em(x, w, m, v, 1e-6, 1e-8, 500)
    one = run_em(x, w[1:], m[1:], v[1:], 1e-6, 1e-8, 500)
    assert both[3][1] == pytest.approx(one[3][0], rel=1e-12)
