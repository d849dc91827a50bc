import numpy as np
import pytest

from dvhpredict.frbp import (
    FRBP_FEATURE_NAMES,
    FdtPredictor,
    FuzzyPartition,
    FuzzySet,
    LEFT_SHOULDER,
    RIGHT_SHOULDER,
    TRIANGLE,
    assign_labels,
    build_fdt,
    fdt_predict,
    fit_partition,
    fit_partitions,
    format_rules,
    generate_rules,
    hfp_partitions,
    parse_rules,
    partitions_from_jsonable,
    partitions_to_jsonable,
    select_partition,
    subtractive_centers,
    _strong_partition,
    _within_variance,
)


def two_group_sample():
    return np.array([0.08, 0.1, 0.12, 0.88, 0.9, 0.92])


class TestSubtractiveCenters:
    def test_degenerate_all_equal(self):
        centers = subtractive_centers(np.full(10, 3.5), r_a=0.5)
        assert centers.tolist() == [3.5]

    def test_two_tight_groups(self):
        v = two_group_sample()
        centers = subtractive_centers(v, r_a=0.3)
        assert len(centers) == 2
        assert abs(centers[0] - 0.1) < 0.05
        assert abs(centers[1] - 0.9) < 0.05

    def test_potential_formula_oracle(self):
        # recompute the first selection directly from the potential formula
        v = two_group_sample()
        r_a = 0.3
        z = (v - v.min()) / (v.max() - v.min())
        pot = np.array([np.sum(np.exp(-(4 / r_a**2) * (zi - z) ** 2)) for zi in z])
        first = v[int(np.argmax(pot))]
        centers = subtractive_centers(v, r_a=r_a)
        assert first in centers

    def test_center_count_nonincreasing_in_radius(self, rng):
        v = np.concatenate([rng.normal(0, 0.05, 20), rng.normal(0.5, 0.05, 20), rng.normal(1, 0.05, 20)])
        counts = [len(subtractive_centers(v, r_a=r)) for r in (0.2, 0.4, 0.6)]
        assert counts == sorted(counts, reverse=True)


class TestPartitions:
    def test_two_centers_shoulder_pair(self):
        cands = hfp_partitions([0.0, 1.0, 2.0, 3.0], [0.5, 2.5])
        assert len(cands) == 1
        shapes = [s.shape for s in cands[0].sets]
        assert shapes == [LEFT_SHOULDER, RIGHT_SHOULDER]

    def test_strong_partition_sums_to_one(self, rng):
        v = rng.uniform(0, 100, 60)
        centers = subtractive_centers(v, r_a=0.4)
        if len(centers) < 2:
            pytest.skip("degenerate draw")
        for part in hfp_partitions(v, centers):
            x = rng.uniform(v.min() - 10, v.max() + 10, 1000)
            sums = part.memberships(x).sum(axis=1)
            assert np.max(np.abs(sums - 1.0)) < 1e-9

    def test_merge_never_decreases_within_std(self, rng):
        for _ in range(10):
            v = rng.uniform(0, 50, 40)
            centers = subtractive_centers(v, r_a=0.25)
            if len(centers) < 3:
                continue
            cands = hfp_partitions(v, centers)
            stds = [c.within_std for c in cands]  # sizes descending
            assert all(s2 >= s1 - 1e-9 for s1, s2 in zip(stds, stds[1:]))

    def test_candidate_sizes_descend_to_two(self, rng):
        v = np.concatenate([rng.normal(m, 0.03, 15) for m in (0.1, 0.4, 0.9)])
        centers = subtractive_centers(v, r_a=0.2)
        cands = hfp_partitions(v, centers)
        sizes = [c.n_sets for c in cands]
        assert sizes[-1] == 2
        assert sizes == sorted(sizes, reverse=True)


class TestSelectPartition:
    def test_single_candidate(self):
        part = _strong_partition([0.0, 1.0], 0, 0.5)
        assert select_partition([part]) is part

    def test_tie_prefers_fewer_sets(self):
        two = _strong_partition([0.0, 1.0], 0, 0.5)
        three = _strong_partition([0.0, 0.5, 1.0], 0, 0.5)
        assert select_partition([three, two], kappa=0.0).n_sets == 2

    def test_kappa_sweep_flips_selection(self, rng):
        v = np.concatenate([rng.normal(0.1, 0.02, 25), rng.normal(0.9, 0.02, 25)])
        centers = np.array([0.05, 0.1, 0.15, 0.85, 0.9])
        cands = hfp_partitions(v, centers)
        sizes = {k: select_partition(cands, kappa=k).n_sets for k in (0.0, 1e-4, 0.3)}
        assert sizes[0.3] == 2
        assert sizes[0.0] >= sizes[1e-4] >= sizes[0.3]

    def test_clearly_bimodal_prefers_two_for_large_kappa(self, rng):
        v = np.concatenate([rng.normal(10, 0.5, 30), rng.normal(90, 0.5, 30)])
        part = fit_partition(v, 0, r_a=0.5)
        assert part.n_sets == 2


class TestLabels:
    @pytest.mark.parametrize(
        "k,expected",
        [
            (2, ("small", "high")),
            (3, ("small", "medium", "high")),
            (5, ("very small", "small", "medium", "high", "very high")),
        ],
    )
    def test_ladder(self, k, expected):
        centers = np.linspace(0, 1, k)
        part = assign_labels(_strong_partition(centers, 0, 0.0))
        assert part.labels == expected


def _cohort(rng, n=30):
    X = np.column_stack(
        [
            rng.uniform(40, 200, n),
            rng.uniform(200, 800, n),
            rng.uniform(40, 120, n),
            rng.uniform(80, 400, n),
            rng.uniform(0.05, 0.35, n),
            rng.uniform(0.05, 0.35, n),
        ]
    )
    return X


class TestRules:
    def test_singleton_rule(self, rng):
        X = _cohort(rng, 8)
        partitions = fit_partitions(X)
        rb = generate_rules(X[:1], np.array([42.5]), partitions)
        assert len(rb.rules) == 1
        assert rb.rules[0].consequent == pytest.approx(42.5)
        assert rb.rules[0].support == 1

    def test_conflict_resolved_by_weighted_mean(self):
        # two samples, identical antecedents, equal degrees -> mean consequent
        sets = (
            FuzzySet("small", LEFT_SHOULDER, 0.0, 0.0, 1.0),
            FuzzySet("high", RIGHT_SHOULDER, 0.0, 1.0, 1.0),
        )
        partitions = tuple(FuzzyPartition(f, sets, 0.0) for f in range(2))
        X = np.array([[0.2, 0.2], [0.2, 0.2]])
        rb = generate_rules(X, np.array([10.0, 30.0]), partitions, feature_names=("f0", "f1"))
        assert len(rb.rules) == 1
        assert rb.rules[0].consequent == pytest.approx(20.0)
        assert rb.rules[0].support == 2

    def test_rule_count_bounded_by_samples(self, rng):
        X = _cohort(rng, 25)
        y = rng.uniform(0, 100, 25)
        partitions = fit_partitions(X)
        rb = generate_rules(X, y, partitions)
        assert len(rb.rules) <= 25

    def test_antecedents_unique_after_resolution(self, rng):
        X = _cohort(rng, 40)
        y = rng.uniform(0, 100, 40)
        rb = generate_rules(X, y, fit_partitions(X))
        antecedents = [r.antecedent for r in rb.rules]
        assert len(antecedents) == len(set(antecedents))

    def test_text_roundtrip(self, rng):
        X = _cohort(rng, 20)
        y = rng.uniform(0, 100, 20)
        rb = generate_rules(X, y, fit_partitions(X))
        text = format_rules(rb)
        rb2 = parse_rules(text)
        assert rb2 == rb

    def test_text_grammar_sample(self):
        text = (
            "# comment line\n"
            "IF ptv60 IS small AND ptv44 IS medium AND rectum IS high AND bladder IS small "
            "AND rectum_overlap IS small AND bladder_overlap IS high "
            "THEN volume_pct = 42.7 (degree=0.83, support=5)\n"
        )
        rb = parse_rules(text)
        assert rb.rules[0].consequent == 42.7
        assert rb.rules[0].degree == 0.83
        assert rb.rules[0].support == 5
        assert rb.rules[0].antecedent[0] == "small"


class TestFdt:
    def test_constant_targets_single_leaf(self, rng):
        X = _cohort(rng, 15)
        partitions = fit_partitions(X)
        tree = build_fdt((X, np.full(15, 33.0)), partitions)
        assert "value" in tree.root
        assert tree.root["value"] == pytest.approx(33.0)

    def test_single_factor_cohort_ranks_causal_feature_first(self, rng):
        X = _cohort(rng, 40)
        y = 100.0 * (X[:, 3] - 80.0) / 320.0  # depends only on feature 3
        partitions = fit_partitions(X)
        tree = build_fdt((X, y), partitions)
        assert tree.root["feature"] == 3
        assert tree.attribute_order[0] == 3

    def test_depth_zero_predicts_global_mean(self, rng):
        X = _cohort(rng, 20)
        y = rng.uniform(0, 100, 20)
        partitions = fit_partitions(X)
        tree = build_fdt((X, y), partitions, max_depth=0)
        assert "value" in tree.root
        assert tree.root["value"] == pytest.approx(y.mean())

    def test_predict_crisp_core_routes_to_leaf(self):
        sets = (
            FuzzySet("small", LEFT_SHOULDER, 0.0, 0.0, 1.0),
            FuzzySet("high", RIGHT_SHOULDER, 0.0, 1.0, 1.0),
        )
        partitions = (FuzzyPartition(0, sets, 0.0),)
        tree = build_fdt(
            (np.array([[0.0], [0.0], [1.0], [1.0]]), np.array([0.0, 0.0, 100.0, 100.0])),
            partitions,
            max_depth=1,
        )
        assert fdt_predict(tree, partitions, np.array([0.0])) == pytest.approx(0.0)
        assert fdt_predict(tree, partitions, np.array([1.0])) == pytest.approx(100.0)

    def test_hand_convex_combination(self):
        sets = (
            FuzzySet("small", LEFT_SHOULDER, 0.0, 0.0, 1.0),
            FuzzySet("high", RIGHT_SHOULDER, 0.0, 1.0, 1.0),
        )
        partitions = (FuzzyPartition(0, sets, 0.0),)
        tree = build_fdt(
            (np.array([[0.0], [1.0]]), np.array([0.0, 100.0])), partitions, max_depth=1
        )
        # membership (0.25, 0.75) -> 0.25*0 + 0.75*100
        assert fdt_predict(tree, partitions, np.array([0.75])) == pytest.approx(75.0)

    def test_prediction_in_target_hull(self, rng):
        X = _cohort(rng, 30)
        y = rng.uniform(20, 60, 30)
        partitions = fit_partitions(X)
        tree = build_fdt((X, y), partitions)
        for _ in range(50):
            x = _cohort(rng, 1)[0]
            pred = fdt_predict(tree, partitions, x)
            assert y.min() - 1e-9 <= pred <= y.max() + 1e-9

    def test_gain_nonnegative_by_construction(self, rng):
        # law of total (weighted) variance: between-set term is the gain
        X = _cohort(rng, 25)
        y = rng.uniform(0, 100, 25)
        partitions = fit_partitions(X)
        w = np.ones(25)
        M = [partitions[f].memberships(X[:, f]) for f in range(6)]
        mean = y.mean()
        var = float(np.mean((y - mean) ** 2))
        for f in range(6):
            child = 0.0
            for s in range(partitions[f].n_sets):
                ws = w * M[f][:, s]
                mass = ws.sum()
                if mass > 0:
                    mu = float(ws @ y) / mass
                    child += (mass / len(y)) * float(ws @ (y - mu) ** 2) / mass
            assert var - child >= -1e-9

    def test_fdt_from_rulebase(self, rng):
        X = _cohort(rng, 30)
        y = 100.0 * (X[:, 4] - 0.05) / 0.3
        partitions = fit_partitions(X)
        rb = generate_rules(X, y, partitions)
        tree = build_fdt(rb, partitions)
        assert tree.root.get("feature") == 4

    def test_partitions_json_roundtrip(self, rng):
        X = _cohort(rng, 20)
        partitions = fit_partitions(X)
        restored = partitions_from_jsonable(partitions_to_jsonable(partitions))
        assert restored == partitions


class TestWithinVariance:
    def test_crisp_limit_matches_pooled_sse(self):
        # far-apart centers make memberships nearly crisp at the cores
        v = np.array([0.0, 0.0, 10.0, 10.0])
        part = _strong_partition([0.0, 10.0], 0, 0.0)
        assert _within_variance(v, part) == pytest.approx(0.0, abs=1e-12)


def test_frbp_whole_curve_contract(small_models):
    from dvhpredict.core import FeatureVector
    from dvhpredict.regressors import AlgorithmId

    model = small_models[AlgorithmId.FRBP]
    pred = model.predict_curve(
        FeatureVector(
            ptv60_cc=120.0,
            ptv44_cc=500.0,
            rectum_cc=90.0,
            bladder_cc=250.0,
            rectum_overlap_frac=0.2,
            bladder_overlap_frac=0.22,
        )
    )
    v = pred.volume_pct
    assert v.min() >= 0.0 and v.max() <= 100.0
    assert np.all(np.diff(v) <= 0.0)
