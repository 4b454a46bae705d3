import json

import numpy as np
import numpy.testing as npt
import pytest

from latentwave.data import (
    CsvSchema,
    DataError,
    DatasetError,
    EncodingError,
    SchemaError,
    encode_covariates,
    load_csv,
    normalize_weights,
    read_dataset,
    simulate,
    split_folds,
    subset_rows,
    write_dataset,
)
from latentwave.model import Parameters

from conftest import make_config, random_dataset, random_parameters


ITEM_COLS = {"ih1": "q_mask", "ih2": "q_wash"}


def write_tracker_csv(path, rows, header=None):
    header = header or [
        "endtime",
        "qweek",
        "weight",
        "age",
        "gender",
        "region",
        "employment_status",
        "q_mask",
        "q_wash",
    ]
    lines = [",".join(header)]
    lines += [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def base_rows():
    return [
        ["2020-04-02", "w1", "1.0", "30", "Female", "South", "Student", "Always", "Rarely"],
        ["2020-04-02", "w1", "1.5", "50", "Male", "North-West", "Retired", "Not at all", "Always"],
        ["2020-04-02", "w1", "0.5", "40", "Female", "Center", "Not working", "Sometimes", "Sometimes"],
        ["2020-04-16", "w2", "2.0", "60", "Male", "Islands", "Full-time employment", "Frequently", "Always"],
        ["2020-04-16", "w2", "1.0", "20", "Female", "North-East", "Part-time employment", "Always", "Not at all"],
    ]


def make_schema(**overrides):
    payload = {"items": ITEM_COLS, "wave": "qweek", **overrides}
    return CsvSchema.from_dict(payload)


class TestLoadCsv:
    def test_fixed_response_encoding(self, tmp_path):
        path = tmp_path / "survey.csv"
        write_tracker_csv(path, base_rows())
        dataset = load_csv(path, make_schema())
        npt.assert_array_equal(dataset.responses[:3, 0], [5, 1, 3])
        assert dataset.n_categories == 5

    def test_wave_structure_and_times(self, tmp_path):
        path = tmp_path / "survey.csv"
        write_tracker_csv(path, base_rows())
        dataset = load_csv(path, make_schema())
        assert dataset.n_waves == 2
        npt.assert_array_equal(dataset.wave_times, [0.0, 14.0])
        npt.assert_array_equal(dataset.wave_sizes(), [3, 2])
        assert dataset.origin_date == "2020-04-02"

    def test_zero_weight_row_dropped_and_reported(self, tmp_path):
        rows = base_rows()
        rows[1][2] = "0"
        path = tmp_path / "survey.csv"
        write_tracker_csv(path, rows)
        dataset = load_csv(path, make_schema())
        assert dataset.n_rows == 4
        assert dataset.drop_report["invalid_weight"] == 1

    def test_missing_column_names_it(self, tmp_path):
        path = tmp_path / "survey.csv"
        write_tracker_csv(path, [r[:-1] for r in base_rows()], header=[
            "endtime", "qweek", "weight", "age", "gender", "region",
            "employment_status", "q_mask",
        ])
        with pytest.raises(SchemaError, match="q_wash"):
            load_csv(path, make_schema())

    def test_unmappable_response_raises_with_row(self, tmp_path):
        rows = base_rows()
        rows[2][7] = "Banana"
        path = tmp_path / "survey.csv"
        write_tracker_csv(path, rows)
        with pytest.raises(DataError, match="row 2"):
            load_csv(path, make_schema())

    def test_unmappable_response_can_be_dropped(self, tmp_path):
        rows = base_rows()
        rows[2][7] = "Banana"
        path = tmp_path / "survey.csv"
        write_tracker_csv(path, rows)
        dataset = load_csv(path, make_schema(unknown_responses="drop"))
        assert dataset.n_rows == 4
        assert dataset.drop_report["missing_response"] == 1

    def test_missing_response_dropped(self, tmp_path):
        rows = base_rows()
        rows[0][8] = ""
        path = tmp_path / "survey.csv"
        write_tracker_csv(path, rows)
        dataset = load_csv(path, make_schema())
        assert dataset.n_rows == 4
        assert dataset.drop_report["missing_response"] == 1

    def test_empty_wave_errors(self, tmp_path):
        rows = base_rows()
        for row in rows[3:]:
            row[2] = "0"  # kill all of wave 2
        path = tmp_path / "survey.csv"
        write_tracker_csv(path, rows)
        with pytest.raises(DatasetError):
            load_csv(path, make_schema())

    def test_dates_without_wave_column(self, tmp_path):
        rows = [r[:1] + r[2:] for r in base_rows()]
        header = [
            "endtime", "weight", "age", "gender", "region",
            "employment_status", "q_mask", "q_wash",
        ]
        path = tmp_path / "survey.csv"
        write_tracker_csv(path, rows, header=header)
        dataset = load_csv(path, make_schema(wave=None))
        assert dataset.n_waves == 2

    def test_unseen_region_level_named(self, tmp_path):
        rows = base_rows()
        rows[0][5] = "Atlantis"
        path = tmp_path / "survey.csv"
        write_tracker_csv(path, rows)
        with pytest.raises(EncodingError, match="Atlantis"):
            load_csv(path, make_schema())


class TestEncodeCovariates:
    def records(self):
        return {
            "age": np.array([40.0, 45.0, 35.0]),
            "gender": np.array(["Female", "Male", "Female"]),
            "region": np.array(["North-West", "South", "Center"]),
            "employment": np.array(["Full-time employment", "Student", "Retired"]),
        }

    def test_age_centering_and_units(self):
        matrix, labels = encode_covariates(self.records())
        assert labels[0] == "age_5yr"
        npt.assert_allclose(matrix[:, 0], [0.0, 1.0, -1.0])

    def test_one_hot_region(self):
        matrix, labels = encode_covariates(self.records())
        south = labels.index("region:South")
        npt.assert_array_equal(matrix[:, south], [0.0, 1.0, 0.0])
        region_cols = [k for k, lab in enumerate(labels) if lab.startswith("region:")]
        assert matrix[0, region_cols].sum() == 0.0  # reference level

    def test_dimension_is_ten(self):
        matrix, labels = encode_covariates(self.records())
        assert matrix.shape[1] == 10
        assert len(labels) == 10

    def test_weighted_mean_centering(self):
        records = self.records()
        weights = np.array([1.0, 3.0, 0.0001])
        matrix, _ = encode_covariates(records, weights=weights)
        mean = np.average(records["age"], weights=weights)
        npt.assert_allclose(matrix[:, 0], (records["age"] - mean) / 5.0)

    def test_unseen_level(self):
        records = self.records()
        records["employment"] = np.array(["Full-time employment", "Astronaut", "Retired"])
        with pytest.raises(EncodingError, match="Astronaut"):
            encode_covariates(records)


class TestNormalizeWeights:
    def make(self, weights, waves):
        n = len(weights)
        return subset_rows(
            _custom_dataset(weights=np.array(weights, dtype=float), waves=np.array(waves)),
            np.arange(n),
        )

    def test_constant_weights_become_one(self):
        dataset = _custom_dataset(np.array([2.0, 2.0, 2.0, 2.0]), np.array([1, 1, 1, 1]))
        npt.assert_allclose(normalize_weights(dataset).weights, 1.0)

    def test_two_row_wave(self):
        dataset = _custom_dataset(np.array([1.0, 3.0]), np.array([1, 1]))
        npt.assert_allclose(normalize_weights(dataset).weights, [0.5, 1.5])

    def test_all_ones_unchanged(self):
        dataset = _custom_dataset(np.ones(5), np.array([1, 1, 1, 2, 2]))
        npt.assert_allclose(normalize_weights(dataset).weights, 1.0)

    def test_idempotent(self):
        rng = np.random.default_rng(4)
        dataset = _custom_dataset(rng.uniform(0.2, 3.0, 9), np.repeat([1, 2, 3], 3))
        once = normalize_weights(dataset)
        twice = normalize_weights(once)
        npt.assert_allclose(twice.weights, once.weights, rtol=1e-15)

    def test_per_wave_sums_match_counts(self):
        rng = np.random.default_rng(9)
        dataset = _custom_dataset(rng.uniform(0.2, 5.0, 12), np.repeat([1, 2, 3, 4], 3))
        normalized = normalize_weights(dataset)
        for wave in range(1, 5):
            rows = normalized.rows_in_wave(wave)
            assert normalized.weights[rows].sum() == pytest.approx(rows.size, rel=1e-10)


def _custom_dataset(weights, waves):
    from latentwave.data import SurveyDataset

    n = len(weights)
    n_waves = int(waves.max())
    return SurveyDataset(
        responses=np.ones((n, 2), dtype=np.int64),
        covariates=np.zeros((n, 1)),
        weights=weights,
        wave_of_row=waves,
        wave_times=np.arange(n_waves, dtype=float),
        item_labels=["a", "b"],
        covariate_labels=["x1"],
        n_categories=3,
    )


class TestSimulate:
    def test_single_profile_is_iid(self):
        config = make_config(n_profiles=1, n_items=2, n_categories=3, n_covariates=1, n_waves=2)
        params = random_parameters(np.random.default_rng(0), config)
        dataset, latent = simulate(params, config, seed=3, n_per_wave=5000)
        assert np.all(latent == 1)
        freq = np.bincount(dataset.responses[:, 0], minlength=4)[1:] / dataset.n_rows
        npt.assert_allclose(freq, params.psi[0, 0], atol=0.03)

    def test_deterministic_given_seed(self):
        config = make_config()
        params = random_parameters(np.random.default_rng(1), config)
        first, z1 = simulate(params, config, seed=11, n_per_wave=50)
        second, z2 = simulate(params, config, seed=11, n_per_wave=50)
        npt.assert_array_equal(first.responses, second.responses)
        npt.assert_array_equal(first.covariates, second.covariates)
        npt.assert_array_equal(z1, z2)

    def test_equal_class_frequencies_without_effects(self):
        config = make_config(n_profiles=3, n_items=1, n_categories=2, n_covariates=2, n_waves=1)
        params = random_parameters(np.random.default_rng(2), config)
        params.beta[:] = 0.0
        params.eta[:] = 0.0
        _, latent = simulate(params, config, seed=5, n_per_wave=100_000)
        freq = np.bincount(latent, minlength=4)[1:] / latent.size
        npt.assert_allclose(freq, 1 / 3, atol=0.02)

    def test_dimension_mismatch_rejected(self):
        config = make_config(n_profiles=3)
        other = make_config(n_profiles=2)
        params = random_parameters(np.random.default_rng(3), other)
        with pytest.raises(ValueError):
            simulate(params, config, seed=1, n_per_wave=5)


class TestSplitFolds:
    def test_divisible_wave(self):
        dataset = _custom_dataset(np.ones(8), np.ones(8, dtype=int))
        folds = split_folds(dataset, 4, seed=0)
        sizes = np.bincount(folds.fold_of_row, minlength=5)[1:]
        npt.assert_array_equal(sizes, [2, 2, 2, 2])

    def test_ragged_wave_balanced(self):
        dataset = _custom_dataset(np.ones(10), np.ones(10, dtype=int))
        folds = split_folds(dataset, 4, seed=1)
        sizes = sorted(np.bincount(folds.fold_of_row, minlength=5)[1:])
        assert sizes == [2, 2, 3, 3]

    def test_deterministic(self):
        dataset = _custom_dataset(np.ones(12), np.repeat([1, 2], 6))
        first = split_folds(dataset, 3, seed=42)
        second = split_folds(dataset, 3, seed=42)
        npt.assert_array_equal(first.fold_of_row, second.fold_of_row)

    def test_partition_properties(self):
        rng = np.random.default_rng(8)
        dataset = _custom_dataset(rng.uniform(0.5, 2, 40), np.repeat([1, 2, 3, 4], 10))
        folds = split_folds(dataset, 4, seed=3)
        all_rows = np.concatenate([folds.rows_in_fold(f) for f in range(1, 5)])
        assert sorted(all_rows) == list(range(40))

    def test_small_wave_errors_with_wave_number(self):
        dataset = _custom_dataset(np.ones(5), np.array([1, 1, 1, 1, 2]))
        with pytest.raises(DatasetError, match="wave 2"):
            split_folds(dataset, 2, seed=0)


class TestCanonicalDump:
    def test_round_trip(self, tmp_path):
        config = make_config()
        dataset, _, _ = random_dataset(61, config, n_per_wave=6)
        write_dataset(dataset, tmp_path / "d.csv", tmp_path / "d.json")
        back = read_dataset(tmp_path / "d.csv", tmp_path / "d.json")
        npt.assert_array_equal(back.responses, dataset.responses)
        npt.assert_allclose(back.covariates, dataset.covariates, rtol=1e-15)
        npt.assert_allclose(back.weights, dataset.weights, rtol=1e-15)
        npt.assert_array_equal(back.wave_of_row, dataset.wave_of_row)
        npt.assert_allclose(back.wave_times, dataset.wave_times)
        assert back.item_labels == dataset.item_labels

    def test_metadata_contents(self, tmp_path):
        config = make_config()
        dataset, _, _ = random_dataset(62, config, n_per_wave=4)
        write_dataset(dataset, tmp_path / "d.csv", tmp_path / "d.json")
        meta = json.loads((tmp_path / "d.json").read_text())
        assert meta["n_categories"] == config.n_categories
        assert meta["wave_sizes"] == [4] * config.n_waves
