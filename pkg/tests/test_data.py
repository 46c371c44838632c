import json
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import norm

from croco.data import (CATEGORICAL, Dataset, Feature, FeatureSchema, denormalize, load_csv, normalize,
                        normalize_point, split, synth_two_gaussians)
from croco.errors import DataError, SchemaError


def write(path, text):
    path.write_text(text)
    return path


TOY_SCHEMA = FeatureSchema((Feature("age"), Feature("colour", CATEGORICAL)), "label")


def test_categorical_expands_to_one_hot(tmp_path):
    path = write(tmp_path / "toy.csv", "age,colour,label\n30,red,0\n40,blue,1\n50,red,1\n")
    ds = load_csv(path, TOY_SCHEMA)
    assert ds.X.shape == (3, 3)
    assert ds.schema.columns == ["age", "colour=blue", "colour=red"]
    np.testing.assert_array_equal(ds.X[:, 1:], [[0, 1], [1, 0], [0, 1]])
    assert ds.schema.mutable_mask.tolist() == [True, False, False]
    assert ds.y.tolist() == [0, 1, 1]


def test_missing_label_column(tmp_path):
    path = write(tmp_path / "toy.csv", "age,colour\n30,red\n")
    with pytest.raises(SchemaError, match="label"):
        load_csv(path, TOY_SCHEMA)


@pytest.mark.parametrize("cell", ["abc", "nan", "inf", ""])
def test_bad_continuous_cells(tmp_path, cell):
    path = write(tmp_path / "toy.csv", f"age,colour,label\n{cell},red,0\n")
    with pytest.raises(DataError):
        load_csv(path, TOY_SCHEMA)


def test_extra_column_rejected(tmp_path):
    path = write(tmp_path / "toy.csv", "age,colour,zip,label\n30,red,1,0\n")
    with pytest.raises(SchemaError, match="zip"):
        load_csv(path, TOY_SCHEMA)


def test_non_binary_label(tmp_path):
    path = write(tmp_path / "toy.csv", "age,colour,label\n30,red,2\n")
    with pytest.raises(DataError, match="label"):
        load_csv(path, TOY_SCHEMA)


def test_compas_shaped_csv(tmp_path):
    rng = np.random.default_rng(0)
    schema = FeatureSchema.from_dict({
        "label": "two_year_recid",
        "features": [
            {"name": "age", "kind": "continuous"},
            {"name": "priors_count", "kind": "continuous"},
            {"name": "length_of_stay", "kind": "continuous"},
            {"name": "juv_count", "kind": "continuous", "mutable": False},
            {"name": "sex", "kind": "categorical"},
            {"name": "race", "kind": "categorical"},
            {"name": "c_charge_degree", "kind": "categorical"},
        ],
    })
    lines = ["age,priors_count,length_of_stay,juv_count,sex,race,c_charge_degree,two_year_recid"]
    for _ in range(40):
        lines.append(",".join([str(rng.integers(18, 70)), str(rng.integers(0, 20)), f"{rng.random() * 30:.2f}",
                               str(rng.integers(0, 3)), rng.choice(["Male", "Female"]),
                               rng.choice(["African-American", "Caucasian", "Other"]),
                               rng.choice(["F", "M"]), str(rng.integers(0, 2))]))
    ds = load_csv(write(tmp_path / "compas.csv", "\n".join(lines) + "\n"), schema)
    kinds = [f.kind for f in ds.schema.features]
    assert kinds.count("continuous") == 4 and kinds.count("categorical") == 3
    assert ds.X.shape == (40, 4 + 2 + 3 + 2)
    assert ds.schema.mutable_mask.sum() == 3
    for group in ds.schema.one_hot_groups():
        np.testing.assert_array_equal(ds.X[:, group].sum(axis=1), 1.0)


def test_schema_json_round_trip(tmp_path):
    path = write(tmp_path / "schema.json", json.dumps(TOY_SCHEMA.to_dict()))
    assert FeatureSchema.from_json(path) == TOY_SCHEMA


def test_schema_needs_continuous_mutable_feature():
    with pytest.raises(SchemaError):
        FeatureSchema((Feature("a", mutable=False), Feature("b", CATEGORICAL)), "y")


def test_normalize_midpoint():
    schema = FeatureSchema((Feature("a"),), "y")
    ds = normalize(Dataset(np.array([[10.0], [20.0], [15.0]]), np.array([0, 1, 0]), schema))
    assert ds.X[2, 0] == 0.5
    assert ds.X.min() == 0.0 and ds.X.max() == 1.0


def test_constant_feature_is_named():
    schema = FeatureSchema((Feature("a"), Feature("flat")), "y")
    ds = Dataset(np.array([[1.0, 3.0], [2.0, 3.0]]), np.array([0, 1]), schema)
    with pytest.raises(DataError, match="flat"):
        normalize(ds)


@given(arrays(np.float64, 2, elements=st.floats(-1e3, 1e3)))
def test_denormalize_round_trip(x):
    ds = normalize(synth_two_gaussians(50, seed=3))
    back = denormalize(ds, normalize_point(ds, x))
    np.testing.assert_allclose(back, x, atol=1e-12 * max(1.0, np.abs(x).max()))


def test_split_sizes_and_partition():
    ds = synth_two_gaussians(100, seed=0)
    tr, te = split(ds, 0.75, seed=4)
    assert (len(tr), len(te)) == (75, 25)
    rows = {tuple(r) for r in tr.X} | {tuple(r) for r in te.X}
    assert len(rows) == 100
    assert not {tuple(r) for r in tr.X} & {tuple(r) for r in te.X}


def test_split_deterministic():
    ds = synth_two_gaussians(60, seed=0)
    a, _ = split(ds, seed=2)
    b, _ = split(ds, seed=2)
    np.testing.assert_array_equal(a.X, b.X)


def test_split_full_fraction_warns():
    ds = synth_two_gaussians(10, seed=0)
    with pytest.warns(UserWarning, match="empty"):
        tr, te = split(ds, 1.0)
    assert len(te) == 0 and len(tr) == 10


def test_synthetic_six_sigma_is_separable():
    from sklearn.linear_model import LogisticRegression
    ds = synth_two_gaussians(2000, separation=6.0, seed=0)
    # Bayes error for unit blobs 6 apart is Phi(-3) ~ 0.00135
    assert norm.cdf(-3.0) < 0.01
    acc = LogisticRegression().fit(ds.X, ds.y).score(ds.X, ds.y)
    assert acc >= 0.99


def test_synthetic_deterministic_and_balanced():
    a = synth_two_gaussians(101, seed=8)
    b = synth_two_gaussians(101, seed=8)
    np.testing.assert_array_equal(a.X, b.X)
    assert abs(int(a.y.sum()) - 50) <= 1


def test_synthetic_empty_rejected():
    with pytest.raises(DataError):
        synth_two_gaussians(0)


def test_labels_must_be_binary():
    schema = FeatureSchema((Feature("a"),), "y")
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 1)), np.array([0, 3]), schema)


def test_dataset_is_read_only():
    ds = synth_two_gaussians(10)
    with pytest.raises(ValueError):
        ds.X[0, 0] = 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert ds.subset([0, 1]).X.shape == (2, 2)
