import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from uvhl.data import (
    CAP,
    COVID,
    UNLABELED,
    Dataset,
    SynthSpec,
    apply_normalization,
    fit_normalization,
    load_dataset,
    save_dataset,
    stratified_kfold,
    synth_generate,
)
from uvhl.errors import IntegrityError, ParseError, SchemaError, ShapeError


def write_csv(path, header, rows):
    path.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows]) + "\n")
    return path


def clinical_layout_header():
    return (["id", "label"] + [f"reg_{i}" for i in range(96)]
            + [f"rad_{i}" for i in range(93)] + ["age", "sex"])


class TestLoadDataset:
    def test_clinical_feature_layout(self, tmp_path):
        header = clinical_layout_header()
        rows = [[f"c{i}", lab] + list(range(191)) for i, lab in enumerate(["COVID", "CAP"])]
        ds = load_dataset(write_csv(tmp_path / "d.csv", header, rows))
        assert ds.d == 191
        assert ds.groups == {"regional": (0, 96), "radiomics": (96, 189), "demographic": (189, 191)}

    def test_labels_and_unlabeled(self, tmp_path):
        rows = [["a", "COVID", 1], ["b", "COVID", 2], ["c", "CAP", 3], ["d", "UNKNOWN", 4]]
        ds = load_dataset(write_csv(tmp_path / "d.csv", ["id", "label", "reg_0"], rows))
        assert ds.n == 4
        assert ds.labeled().size == 3
        assert ds.unlabeled().tolist() == [3]
        assert ds.labels.tolist() == [COVID, COVID, CAP, UNLABELED]
        assert ds.ids == ("a", "b", "c", "d")

    def test_missing_label_column(self, tmp_path):
        with pytest.raises(SchemaError, match="label"):
            load_dataset(write_csv(tmp_path / "d.csv", ["id", "reg_0"], [["a", 1]]))

    def test_non_numeric_cell_reports_location(self, tmp_path):
        rows = [["a", "COVID", 1], ["b", "CAP", "oops"]]
        with pytest.raises(ParseError, match=r"line 3.*reg_0"):
            load_dataset(write_csv(tmp_path / "d.csv", ["id", "label", "reg_0"], rows))

    def test_duplicate_id(self, tmp_path):
        rows = [["a", "COVID", 1], ["a", "CAP", 2]]
        with pytest.raises(IntegrityError):
            load_dataset(write_csv(tmp_path / "d.csv", ["id", "label", "reg_0"], rows))

    def test_bad_label_and_missing_value(self, tmp_path):
        with pytest.raises(SchemaError):
            load_dataset(write_csv(tmp_path / "a.csv", ["id", "label", "reg_0"], [["a", "FLU", 1]]))
        with pytest.raises(ParseError):
            load_dataset(write_csv(tmp_path / "b.csv", ["id", "label", "reg_0"], [["a", "CAP", ""]]))

    def test_interleaved_columns_are_grouped(self, tmp_path):
        rows = [["a", "CAP", 1, 2, 3, 4]]
        ds = load_dataset(write_csv(tmp_path / "d.csv", ["id", "label", "rad_0", "reg_0", "age", "reg_1"], rows))
        assert ds.feature_names == ("reg_0", "reg_1", "rad_0", "age")
        assert ds.features.tolist() == [[2.0, 4.0, 1.0, 3.0]]

    def test_round_trip(self, tmp_path):
        ds, _ = synth_generate(SynthSpec.separated(3, 2), 5, 0.2, 0.2, seed=3)
        save_dataset(ds, tmp_path / "d.csv")
        back = load_dataset(tmp_path / "d.csv")
        assert back.ids == ds.ids
        np.testing.assert_array_equal(back.features, ds.features)
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert back.groups == ds.groups


def column_dataset(values):
    values = np.asarray(values, dtype=float).reshape(len(values), -1)
    n, d = values.shape
    return Dataset([str(i) for i in range(n)], values, {"regional": (0, d)}, np.zeros(n, dtype=int))


class TestNormalization:
    def test_min_max(self):
        p = fit_normalization(column_dataset([0, 5, 10]), [0, 1, 2])
        assert p.min.tolist() == [0.0] and p.max.tolist() == [10.0]
        assert p.fitted_on == 3

    def test_constant_column(self):
        ds = column_dataset([3, 3, 3])
        p = fit_normalization(ds, [0, 1, 2])
        assert p.min.tolist() == p.max.tolist() == [3.0]
        assert apply_normalization(p, ds.features).tolist() == [[0.0], [0.0], [0.0]]

    def test_deterministic(self):
        ds = column_dataset(np.random.default_rng(0).normal(size=(6, 3)))
        a, b = fit_normalization(ds, [0, 2, 4]), fit_normalization(ds, [0, 2, 4])
        np.testing.assert_array_equal(a.min, b.min)
        np.testing.assert_array_equal(a.max, b.max)

    def test_apply_unclamped(self):
        p = fit_normalization(column_dataset([0, 10]), [0, 1])
        assert apply_normalization(p, np.array([[5.0], [20.0]])).ravel().tolist() == [0.5, 2.0]

    def test_only_train_rows_used(self):
        p = fit_normalization(column_dataset([0, 10, 1000]), [0, 1])
        assert p.max.tolist() == [10.0]

    def test_errors(self):
        ds = column_dataset([0, 1])
        with pytest.raises(ValueError):
            fit_normalization(ds, [])
        with pytest.raises(ShapeError):
            apply_normalization(fit_normalization(ds, [0, 1]), np.zeros((2, 3)))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(2, 12), st.integers(1, 4)),
                  elements=st.floats(-1e6, 1e6, allow_nan=False)))
    def test_train_rows_land_in_unit_interval(self, X):
        ds = column_dataset(X)
        p = fit_normalization(ds, np.arange(ds.n))
        Z = apply_normalization(p, X)
        assert np.all(Z >= 0.0) and np.all(Z <= 1.0)

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(2, 10), st.integers(1, 3)),
                  elements=st.floats(-100, 100, allow_nan=False)), st.randoms())
    def test_row_order_irrelevant(self, X, rnd):
        p = fit_normalization(column_dataset(X), np.arange(len(X)))
        perm = list(range(len(X)))
        rnd.shuffle(perm)
        np.testing.assert_array_equal(apply_normalization(p, X)[perm], apply_normalization(p, X[perm]))


def labeled_dataset(n0, n1, n_unlabeled=0):
    labels = np.array([COVID] * n0 + [CAP] * n1 + [UNLABELED] * n_unlabeled)
    n = labels.size
    return Dataset([str(i) for i in range(n)], np.zeros((n, 1)), {"regional": (0, 1)}, labels)


class TestStratifiedKFold:
    def test_exact_counts(self):
        ds = labeled_dataset(12, 8)
        plan = stratified_kfold(ds, 4, seed=1)
        for f in range(4):
            members = plan.test_rows(f)
            assert np.sum(ds.labels[members] == COVID) == 3
            assert np.sum(ds.labels[members] == CAP) == 2

    def test_union_is_labeled_rows(self):
        ds = labeled_dataset(7, 9, n_unlabeled=3)
        plan = stratified_kfold(ds, 3, seed=0)
        union = np.sort(np.concatenate([plan.test_rows(f) for f in range(3)]))
        np.testing.assert_array_equal(union, ds.labeled())
        assert np.all(plan.assignments[ds.unlabeled()] == -1)

    def test_same_seed_same_plan(self):
        ds = labeled_dataset(10, 10)
        np.testing.assert_array_equal(stratified_kfold(ds, 5, 3).assignments,
                                      stratified_kfold(ds, 5, 3).assignments)

    def test_too_few_members(self):
        with pytest.raises(ValueError, match="fewer than k"):
            stratified_kfold(labeled_dataset(10, 3), 4, 0)
        with pytest.raises(ValueError):
            stratified_kfold(labeled_dataset(10, 10), 1, 0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 6), st.integers(0, 30), st.integers(0, 30), st.integers(0, 2**31))
    def test_stratification_bound(self, k, extra0, extra1, seed):
        n0, n1 = k + extra0, k + extra1
        ds = labeled_dataset(n0, n1)
        plan = stratified_kfold(ds, k, seed)
        for f in range(k):
            y = ds.labels[plan.test_rows(f)]
            assert abs(np.sum(y == COVID) - n0 / k) <= 1
            assert abs(np.sum(y == CAP) - n1 / k) <= 1


class TestSynth:
    def test_noise_free_is_reproducible(self):
        spec = SynthSpec.separated(4, 4)
        a, _ = synth_generate(spec, 20, seed=5)
        b, _ = synth_generate(spec, 20, seed=5)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_separated_clusters_one_nn_accuracy(self):
        ds, _ = synth_generate(SynthSpec.separated(5, 5, separation=20.0), 50, seed=2)
        X, y = ds.features, ds.labels
        correct = 0
        for i in range(ds.n):
            best, best_j = np.inf, -1
            for j in range(ds.n):
                if j != i:
                    dist = np.sum((X[i] - X[j]) ** 2)
                    if dist < best:
                        best, best_j = dist, j
            correct += y[best_j] == y[i]
        assert correct / ds.n == 1.0

    def test_exact_flip_count_and_mask(self):
        ds, mask = synth_generate(SynthSpec.separated(3, 3), 100, label_noise=0.2, seed=1)
        truth = np.repeat([COVID, CAP], 100)
        flipped = ds.labels != truth
        np.testing.assert_array_equal(flipped, mask.flipped)
        assert mask.flipped[:100].sum() == 20 and mask.flipped[100:].sum() == 20

    def test_feature_noise_inflates_spread(self):
        spec = SynthSpec.separated(5, 5, noise_inflation=5.0)
        ds, mask = synth_generate(spec, 200, feature_noise=0.25, seed=0)
        assert mask.feature_noise.sum() == 100
        centred = ds.features - spec.means[np.repeat([0, 1], 200)]
        spread = np.linalg.norm(centred, axis=1)
        assert spread[mask.feature_noise].mean() > 3 * spread[~mask.feature_noise].mean()

    def test_mask_file(self, tmp_path):
        ds, mask = synth_generate(SynthSpec.separated(2, 2), 5, 0.4, 0.2, seed=0)
        mask.save(tmp_path / "m.csv", ds.ids)
        lines = (tmp_path / "m.csv").read_text().splitlines()
        assert lines[0] == "id,flipped,feature_noise"
        assert sum(int(l.split(",")[1]) for l in lines[1:]) == mask.flipped.sum() == 4

    def test_invalid_arguments(self):
        spec = SynthSpec.separated(2, 2)
        with pytest.raises(ValueError):
            synth_generate(spec, 10, label_noise=1.5)
        with pytest.raises(ValueError):
            synth_generate(spec, 0)
        bad = SynthSpec(spec.means, np.stack([-np.eye(4), np.eye(4)]), spec.groups)
        with pytest.raises(ValueError, match="positive definite"):
            synth_generate(bad, 10)


class TestDatasetInvariants:
    def test_groups_must_cover_columns(self):
        with pytest.raises(SchemaError):
            Dataset(["a"], np.zeros((1, 3)), {"regional": (0, 2)}, [0])
        with pytest.raises(SchemaError):
            Dataset(["a"], np.zeros((1, 3)), {"regional": (0, 2), "radiomics": (1, 3)}, [0])

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            Dataset(["a"], np.array([[np.nan]]), {"regional": (0, 1)}, [0])
