import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oodspectrum.analysis import (
    HUMAN_HUMAN,
    HUMAN_MODEL,
    AlignmentRecord,
    AlignmentRatio,
    DistanceMatrix,
    alignment_ratio,
    alignment_ratios,
    alignment_vector,
    alignment_vectors,
    cled_group_separability,
    condition_cled_matrix,
    family_permutation_test,
    human_baseline,
    pairwise_alignment,
    rank_models,
    select_representatives,
    superfamily_rank_test,
)
from oodspectrum.errors import (
    DomainError,
    EmptyRoster,
    FamilyTooSmall,
    ModelMissingRegimeData,
    NoDefinedCells,
    NoWithinPairs,
    ZeroHumanBaseline,
)
from oodspectrum.ingest import Condition, build_response_sets
from oodspectrum.spectrum import RegimeAssignment, build_spectrum
from oodspectrum.stats import OODScore
from oodspectrum import synth


def rec(cid, a, b, kind, ec, ma):
    return AlignmentRecord(cid, a, b, kind, ec, ma)


def _assignment(mapping, means):
    regimes = tuple(sorted(set(mapping.values()), key=lambda r: -means[r]))
    return RegimeAssignment(regimes, dict(mapping), {}, (), tuple(means[r] for r in regimes))


class TestPairwise:
    def test_counts(self, pipeline_by_condition):
        sets = pipeline_by_condition["contrast_c10"]
        humans = [s for s in sets if s.system_kind == "human"]
        pa = pairwise_alignment(humans)
        assert len(pa.records) == 6
        one_model = humans + [next(s for s in sets if s.system_kind == "model")]
        kinds = [r.kind for r in pairwise_alignment(one_model).records]
        assert kinds.count(HUMAN_MODEL) == 4 and kinds.count(HUMAN_HUMAN) == 6

    def test_non_comparable_skipped(self):
        a = synth.response_set("ab", "ab", "abc", "x", image_ids=["1", "2"], system_kind="human")
        b = synth.response_set("ab", "ba", "abc", "y", image_ids=["1", "3"], system_kind="human")
        c = synth.response_set("ab", "bb", "abc", "z", image_ids=["1", "2"], system_kind="human")
        pa = pairwise_alignment([a, b, c])
        assert len(pa.non_comparable) == 2 and len(pa.records) == 1

    def test_mixed_conditions_rejected(self, pipeline_by_condition):
        with pytest.raises(DomainError):
            pairwise_alignment(pipeline_by_condition["contrast_c10"][:1] + pipeline_by_condition["contrast_c30"][:1])

    def test_human_ec_matches_configured_coupling(self):
        # two humans with coupling r share correctness on an r^2 fraction of trials, giving EC ~ r^2
        coupling = 0.7
        obs = tuple(synth.ObserverSpec(f"subject-{i}", 0.6, None, coupling) for i in range(4))
        spec = synth.ScenarioSpec((synth.ScenarioCondition("t", "0"),), obs, images_per_condition=4000)
        sets = list(build_response_sets(synth.simulate_observers(spec, 2)).values())
        ecs = [r.ec for r in pairwise_alignment(sets).records]
        assert np.mean(ecs) == pytest.approx(coupling ** 2, abs=0.04)


class TestRatio:
    def test_equal_is_one(self):
        m = [rec("c", "h1", "m", HUMAN_MODEL, 0.4, 0.2)]
        h = [rec("c", "h1", "h2", HUMAN_HUMAN, 0.4, 0.2)]
        assert alignment_ratio(m, h, "c").rho == 1.0

    def test_half(self):
        m = [rec("c", "h1", "m", HUMAN_MODEL, 0.3, 0.3)]
        h = [rec("c", "h1", "h2", HUMAN_HUMAN, 0.6, 0.6)]
        r = alignment_ratio(m, h, "c")
        assert (r.rho, r.a_model, r.a_human, r.model_id) == (0.5, 0.3, 0.6, "m")

    def test_undefined_excluded(self):
        m = [rec("c", "h1", "m", HUMAN_MODEL, 0.2, 0.4), rec("c", "h2", "m", HUMAN_MODEL, 0.5, None)]
        h = [rec("c", "h1", "h2", HUMAN_HUMAN, 0.6, 0.6)]
        r = alignment_ratio(m, h, "c")
        assert r.rho == pytest.approx(0.5) and r.excluded_model_cells == 1
        assert alignment_ratio(m, h, "c", metric="ec").a_model == pytest.approx(0.35)

    def test_errors(self):
        h0 = [rec("c", "h1", "h2", HUMAN_HUMAN, 0.0, 0.0)]
        m = [rec("c", "h1", "m", HUMAN_MODEL, 0.2, 0.4)]
        with pytest.raises(ZeroHumanBaseline):
            alignment_ratio(m, h0, "c")
        with pytest.raises(NoDefinedCells):
            alignment_ratio([rec("c", "h1", "m", HUMAN_MODEL, None, 0.2)], h0, "c", model_id="m")

    @given(st.floats(0.01, 10), st.lists(st.floats(0.05, 1), min_size=4, max_size=4))
    def test_scale_consistent(self, k, v):
        m = [rec("c", "h1", "m", HUMAN_MODEL, v[0], v[1])]
        h = [rec("c", "h1", "h2", HUMAN_HUMAN, v[2], v[3])]
        ms = [rec("c", "h1", "m", HUMAN_MODEL, k * v[0], k * v[1])]
        hs = [rec("c", "h1", "h2", HUMAN_HUMAN, k * v[2], k * v[3])]
        assert alignment_ratio(ms, hs, "c").rho == pytest.approx(alignment_ratio(m, h, "c").rho, rel=1e-9)

    def test_copying_model_exceeds_one(self):
        # a model that copies one participant aligns with that participant perfectly
        obs = tuple(synth.ObserverSpec(f"subject-{i}", 0.6, None, 0.3) for i in range(3))
        spec = synth.ScenarioSpec((synth.ScenarioCondition("t", "0"),), obs, images_per_condition=600)
        table = synth.simulate_observers(spec, 1)
        sets = list(build_response_sets(table).values())
        src = sets[0]
        clone = synth.response_set(src.truths, src.responses, src.categories, "copycat", image_ids=src.image_ids,
                                   condition=src.condition, system_kind="model")
        recs = pairwise_alignment(sets + [clone]).records
        r = alignment_ratio([x for x in recs if x.kind == HUMAN_MODEL], recs, "t_0")
        assert 1 < r.rho < np.inf


def _ratios(values):
    return [AlignmentRatio(m, c, v, v, 1.0) for (m, c), v in values.items()]


class TestRanking:
    ASSIGN = _assignment({"c1": "near-OOD", "c2": "near-OOD", "c3": "far-OOD"},
                         {"near-OOD": -4.0, "far-OOD": -8.0})
    REPS = {("x", "near-OOD"): "c1", ("y", "near-OOD"): "c2", ("x", "far-OOD"): "c3"}

    def test_order_and_dispersion(self):
        ratios = _ratios({("a", "c1"): 0.5, ("a", "c2"): 0.7, ("b", "c1"): 0.9, ("b", "c2"): 0.9,
                          ("a", "c3"): 0.2, ("b", "c3"): 0.1})
        out = rank_models(ratios, self.ASSIGN, self.REPS)
        assert out["near-OOD"].order() == ["b", "a"]
        assert out["near-OOD"].entries[1].sd_rho == pytest.approx(np.std([0.5, 0.7], ddof=1))
        assert out["far-OOD"].order() == ["a", "b"]

    def test_tie_flag(self):
        ratios = _ratios({("b", "c1"): 0.5, ("a", "c1"): 0.5, ("b", "c3"): 1, ("a", "c3"): 1})
        out = rank_models(ratios, self.ASSIGN, self.REPS)
        entries = out["near-OOD"].entries
        assert [e.model_id for e in entries] == ["a", "b"] and all(e.tied for e in entries)

    def test_missing_model_listed(self):
        ratios = _ratios({("a", "c1"): 0.5, ("b", "c1"): 0.4, ("a", "c3"): 0.3})
        with pytest.raises(ModelMissingRegimeData) as exc:
            rank_models(ratios, self.ASSIGN, self.REPS)
        assert exc.value.missing == [("b", "far-OOD")]
        assert rank_models(ratios, self.ASSIGN, self.REPS, strict=False)["far-OOD"].missing == ("b",)

    @given(st.lists(st.integers(0, 200), min_size=3, max_size=3, unique=True), st.floats(0.1, 5), st.floats(-1, 1))
    def test_affine_invariant_order(self, ints, scale, shift):
        vals = [i / 100 for i in ints]
        a = _assignment({"c1": "near-OOD"}, {"near-OOD": -4.0})
        reps = {("x", "near-OOD"): "c1"}
        base = rank_models(_ratios({(m, "c1"): v for m, v in zip("pqr", vals)}), a, reps)["near-OOD"].order()
        moved = rank_models(_ratios({(m, "c1"): scale * v + shift for m, v in zip("pqr", vals)}), a,
                            reps)["near-OOD"].order()
        assert base == moved

    def test_planted_gradient_recovered(self, pipeline_sets, pipeline_config, pipeline_by_condition):
        sp = build_spectrum(pipeline_sets.values(), pipeline_config)
        recs = [r for cid in sorted(pipeline_by_condition) for r in pairwise_alignment(pipeline_by_condition[cid]).records]
        models = sorted({s.system_id for s in pipeline_sets.values() if s.system_kind == "model"})
        reps = select_representatives(sp.assignment, sp.scores)
        ratios, _ = alignment_ratios(recs, models, pipeline_by_condition)
        ranking = rank_models(ratios, sp.assignment, reps.chosen)
        fam = {s.system_id: s.family for s in pipeline_sets.values()}
        for regime in ("near-OOD", "far-OOD"):
            order = [fam[m] for m in ranking[regime].order()]
            assert order == ["VLM"] * 4 + ["CNN"] * 4 + ["ViT"] * 4


class TestRepresentatives:
    def test_nearest_and_tie(self):
        scores = [OODScore(Condition("x", lvl), d, 0, 0, 1) for lvl, d in (("10", -3.0), ("5", -5.0), ("20", -8.0))]
        a = _assignment({"x_10": "near-OOD", "x_5": "near-OOD", "x_20": "far-OOD"},
                        {"near-OOD": -4.0, "far-OOD": -8.0})
        r = select_representatives(a, scores)
        assert r.chosen[("x", "near-OOD")] == "x_5"  # numeric tokens order numerically
        assert r.ties == [("x", "near-OOD", ("x_5", "x_10"))]
        assert r.chosen[("x", "far-OOD")] == "x_20"

    def test_absent_cells_noted(self):
        scores = [OODScore(Condition("x", "1"), -4.0, 0, 0, 1)]
        a = RegimeAssignment(("reference", "near-OOD"), {"x_1": "near-OOD"}, {}, (), (0.0, -4.0))
        r = select_representatives(a, scores)
        assert r.absent == [("x", "reference")]

    def test_exhaustive_scan(self, pipeline_sets, pipeline_config):
        sp = build_spectrum(pipeline_sets.values(), pipeline_config)
        reps = select_representatives(sp.assignment, sp.scores)
        for (dtype, regime), cid in reps.chosen.items():
            mean = sp.assignment.means[sp.assignment.component_index(regime)]
            cands = [s for s in sp.scores if s.condition.distortion_type == dtype
                     and sp.assignment.assignment[s.condition.condition_id] == regime]
            best = min(abs(s.delta - mean) for s in cands)
            assert abs(sp.delta(cid) - mean) == best


class TestVectors:
    def _records(self):
        return [rec("c1", "h1", "m1", HUMAN_MODEL, 0.2, 0.4), rec("c1", "h2", "m1", HUMAN_MODEL, 0.4, 0.6),
                rec("c1", "h1", "m2", HUMAN_MODEL, 0.2, 0.4), rec("c1", "h2", "m2", HUMAN_MODEL, 0.4, 0.6),
                rec("c2", "h1", "m1", HUMAN_MODEL, 0.1, None), rec("c2", "h1", "m2", HUMAN_MODEL, 0.3, 0.5),
                rec("c1", "h1", "h2", HUMAN_HUMAN, 0.5, 0.5)]

    def test_shape_and_imputation(self):
        v = alignment_vectors(self._records(), ["m1", "m2"], ["c1", "c2"])
        assert v.matrix.shape == (2, 4) and v.imputed == 1
        assert v.vector("m1").tolist() == pytest.approx([0.3, 0.5, 0.1, 0.5])

    def test_identical_records_zero_distance(self):
        v = alignment_vectors(self._records(), ["m1", "m2"], ["c1"])
        assert v.distances().values[0, 1] == 0

    def test_length_fourteen(self):
        roster = [f"t{i}_1" for i in range(7)]
        recs = [rec(c, "h1", "m", HUMAN_MODEL, 0.1, 0.2) for c in roster]
        assert alignment_vector("m", recs + [rec("t0_1", "h1", "h2", HUMAN_HUMAN, 1, 1)], roster).shape == (14,)

    def test_empty_roster(self):
        with pytest.raises(EmptyRoster):
            alignment_vectors(self._records(), ["m1"], [])


def _planted(groups=3, size=6):
    labels = [f"g{g}m{i}" for g in range(groups) for i in range(size)]
    grp = {lab: lab[:2] for lab in labels}
    d = np.array([[0.0 if grp[a] == grp[b] else 1.0 for b in labels] for a in labels])
    return DistanceMatrix(tuple(labels), d), grp


class TestPermutation:
    def test_planted_at_floor(self):
        dm, grp = _planted()
        res = family_permutation_test(dm, grp, n_perm=500, seed=1)
        assert res.p_value == 1 / 501 and res.effect_size > 5 and res.observed == 1.0

    def test_relabel_invariant(self):
        gen = np.random.default_rng(0)
        x = gen.random((10, 3))
        labels = tuple(f"m{i}" for i in range(10))
        dm = DistanceMatrix(labels, np.sqrt(((x[:, None] - x[None]) ** 2).sum(-1)))
        g1 = {lab: "AB"[i % 2] for i, lab in enumerate(labels)}
        g2 = {lab: "yx"[i % 2] for i, lab in enumerate(labels)}
        assert family_permutation_test(dm, g1, 50).observed == family_permutation_test(dm, g2, 50).observed

    def test_deterministic_and_chunk_free(self):
        dm, grp = _planted(2, 4)
        a = family_permutation_test(dm, grp, 1200, seed=3)
        b = family_permutation_test(dm, grp, 1200, seed=3)
        assert a == b

    def test_singletons_allowed(self):
        dm, grp = _planted(2, 3)
        grp = dict(grp, **{"extra": "solo"})
        labels = dm.labels + ("extra",)
        vals = np.pad(dm.values, ((0, 1), (0, 1)), constant_values=1.0)
        vals[-1, -1] = 0
        res = family_permutation_test(DistanceMatrix(labels, vals), grp, 100)
        assert res.n_within == 6

    def test_no_within_pairs(self):
        dm, grp = _planted(3, 1)
        with pytest.raises(NoWithinPairs):
            family_permutation_test(dm, grp, 10)

    def test_calibration_fraction(self):
        gen = np.random.default_rng(42)
        labels = tuple(f"m{i}" for i in range(12))
        hits = 0
        for run in range(200):
            x = gen.random((12, 4))
            dm = DistanceMatrix(labels, np.sqrt(((x[:, None] - x[None]) ** 2).sum(-1)))
            grp = {lab: f"f{j}" for lab, j in zip(labels, gen.permutation(np.repeat(np.arange(3), 4)))}
            hits += family_permutation_test(dm, grp, 199, seed=run).p_value < 0.05
        assert 0.01 <= hits / 200 <= 0.10

    def test_distance_matrix_invariants(self):
        with pytest.raises(DomainError):
            DistanceMatrix(("a", "b"), np.array([[0, 1], [2, 0]]))
        with pytest.raises(DomainError):
            DistanceMatrix(("a", "b"), np.array([[1, 1], [1, 0]]))


class TestSeparability:
    def test_planted(self):
        # 3 groups of 6 give ~2.9e6 distinct partitions, so the floor is reachable
        dm, grp = _planted(3, 6)
        noisy = dm.values + 0.1 * np.random.default_rng(0).random(dm.values.shape)
        noisy = (noisy + noisy.T) / 2
        np.fill_diagonal(noisy, 0)
        d, res = cled_group_separability(DistanceMatrix(dm.labels, noisy), grp, 400, seed=0)
        assert d < -3 and res.p_value == 1 / 401

    def test_singletons(self):
        dm, _ = _planted(2, 2)
        with pytest.raises(NoWithinPairs):
            cled_group_separability(dm, {lab: lab for lab in dm.labels}, 10)

    def test_cled_matrix_on_pipeline(self, pipeline_sets):
        cm = condition_cled_matrix(pipeline_sets.values())
        assert len(cm.labels) == 32
        finite = cm.values[~np.isnan(cm.values)]
        assert np.all((finite >= 0) & (finite <= 1))


class TestFamilyRanks:
    def test_identical(self):
        out = superfamily_rank_test({"A": [0.5, 0.6, 0.7], "B": [0.5, 0.6, 0.7]})
        assert out[0].relation == "≥" and out[0].test.p_value == pytest.approx(1.0)

    def test_disjoint(self):
        out = superfamily_rank_test({"A": list(np.linspace(0.8, 1, 8)), "B": list(np.linspace(0.1, 0.3, 8))})
        assert (out[0].higher, out[0].relation) == ("A", ">")

    def test_too_small(self):
        with pytest.raises(FamilyTooSmall):
            superfamily_rank_test({"A": [1.0, 2.0], "B": [1.0]})

    def test_planted_order(self):
        gen = np.random.default_rng(1)
        fams = {"VLM": gen.normal(0.9, 0.02, 8), "CNN": gen.normal(0.6, 0.02, 8), "ViT": gen.normal(0.3, 0.02, 8)}
        rel = {(c.higher, c.lower): c.relation for c in superfamily_rank_test(fams)}
        assert rel == {("VLM", "CNN"): ">", ("CNN", "ViT"): ">", ("VLM", "ViT"): ">"}


def test_human_baseline():
    recs = [rec("c", "a", "b", HUMAN_HUMAN, 0.2, 0.4), rec("c", "a", "c", HUMAN_HUMAN, 0.4, None)]
    out = human_baseline(recs)
    assert out["c"]["mean"] == pytest.approx(0.3) and out["c"]["n_excluded"] == 1
