import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from core.data import (
    Dataset,
    SplitPlan,
    column_statistics,
    gen_quadratic,
    gen_sin,
    largest_remainder,
    load_csv,
    load_features,
    make_split,
    resolve_data,
    role_rows,
    standardize,
    write_csv,
)
from infrastructure.errors import ConfigurationError, IngestionError, InputError


def _write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_load_well_formed_csv(tmp_path):
    path = _write(tmp_path, "a,b,y\n1,2,3\n4,5,6\n7.5,-1e-3,9\n")
    data = load_csv(path, "y")
    assert data.n == 3 and data.d == 2
    assert data.feature_names == ("a", "b")
    np.testing.assert_array_equal(data.target, [3.0, 6.0, 9.0])
    assert data.features[2, 1] == -1e-3


def test_non_numeric_cell_is_located(tmp_path):
    path = _write(tmp_path, "a,b,y\n1,2,3\n4,abc,6\n")
    with pytest.raises(IngestionError) as info:
        load_csv(path, "y")
    assert info.value.row == 3
    assert info.value.column == "b"
    assert "abc" in str(info.value)


def test_missing_values_are_reported(tmp_path):
    path = _write(tmp_path, "a,y\n1,2\n,3\n")
    with pytest.raises(IngestionError) as info:
        load_csv(path, "y")
    assert info.value.row == 3


def test_missing_target_column(tmp_path):
    path = _write(tmp_path, "a,b\n1,2\n")
    with pytest.raises(ConfigurationError):
        load_csv(path, "y")


def test_missing_file():
    with pytest.raises(IngestionError):
        load_csv("/nonexistent/file.csv", "y")


def test_load_features_ignores_extra_columns(tmp_path):
    path = _write(tmp_path, "b,a,extra\n1,2,3\n")
    np.testing.assert_array_equal(load_features(path, ["a", "b"]), [[2.0, 1.0]])
    with pytest.raises(InputError):
        load_features(path, ["a", "c"])


def test_write_csv_reloads_bit_identically(tmp_path):
    data = gen_quadratic(2000, n_irrelevant=5, seed=4)
    path = str(tmp_path / "out.csv")
    write_csv(data, path)
    again = load_csv(path, "y")
    assert np.array_equal(again.features, data.features)
    assert np.array_equal(again.target, data.target)
    assert again.feature_names == data.feature_names


@settings(max_examples=25, deadline=None)
@given(values=st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=20))
def test_extreme_floats_reload_exactly(tmp_path_factory, values):
    column = np.array(values, dtype=np.float64)
    path = str(tmp_path_factory.mktemp("floats") / "values.csv")
    write_csv(Dataset(features=column[:, None], target=column[::-1].copy(), feature_names=("v",)), path)
    again = load_csv(path, "y")
    assert np.array_equal(again.features[:, 0], column)
    assert np.array_equal(again.target, column[::-1])


def test_standardize_constant_and_standard_columns():
    rng = np.random.default_rng(0)
    z = rng.normal(size=50)
    z = (z - z.mean()) / z.std()
    data = Dataset(features=np.column_stack([z, np.full(50, 4.0)]), target=np.zeros(50), feature_names=("z", "c"))
    out = standardize(data, np.arange(50))
    np.testing.assert_allclose(out.features[:, 0], z, atol=1e-12)
    assert np.all(out.features[:, 1] == 0.0)
    assert out.stds[1] == 1.0
    np.testing.assert_allclose(out.inverse_transform(out.features), data.features, atol=1e-12)


def test_standardize_uses_only_fit_rows():
    x = np.arange(10, dtype=float)[:, None]
    data = Dataset(features=x, target=np.zeros(10), feature_names=("x",))
    out = standardize(data, [0, 1, 2])
    assert out.means[0] == 1.0
    with pytest.raises(InputError):
        standardize(data, [])


def test_column_statistics_sentinel():
    means, stds = column_statistics(np.array([[1.0, 2.0], [1.0, 4.0]]))
    np.testing.assert_array_equal(means, [1.0, 3.0])
    np.testing.assert_array_equal(stds, [1.0, 1.0])


def test_holdout_counts():
    roles = make_split(10, SplitPlan(seed=0, fractions=(0.9, 0.1)))
    assert role_rows(roles, 0).size == 9 and role_rows(roles, 1).size == 1


def test_fold_sizes_follow_largest_remainder():
    roles = make_split(506, SplitPlan(seed=0, folds=5))
    assert [role_rows(roles, k).size for k in range(5)] == [102, 101, 101, 101, 101]


def test_split_is_reproducible():
    plan = SplitPlan(seed=11, fractions=(0.7, 0.2, 0.1))
    assert np.array_equal(make_split(100, plan), make_split(100, plan))
    assert not np.array_equal(make_split(100, plan), make_split(100, SplitPlan(seed=12, fractions=(0.7, 0.2, 0.1))))


def test_split_errors():
    with pytest.raises(ConfigurationError):
        make_split(3, SplitPlan(seed=0, folds=5))
    with pytest.raises(ConfigurationError):
        make_split(10, SplitPlan(seed=0, fractions=(0.5, 0.4)))
    with pytest.raises(ConfigurationError):
        make_split(10, SplitPlan(seed=0))


@given(n=st.integers(0, 5000), weights=st.lists(st.integers(1, 100), min_size=1, max_size=8))
def test_largest_remainder_sums_to_n(n, weights):
    fractions = [w / sum(weights) for w in weights]
    counts = largest_remainder(n, fractions)
    assert sum(counts) == n
    assert all(abs(c - f * n) < 1 for c, f in zip(counts, fractions))


def test_gen_sin():
    data = gen_sin(2000, seed=0)
    assert data.n == 2000 and data.d == 1
    assert np.all(np.abs(data.target) <= 1.0)
    assert np.all((data.features >= 0) & (data.features <= 2 * np.pi))
    assert np.array_equal(gen_sin(100, seed=3).features, gen_sin(100, seed=3).features)


@pytest.mark.parametrize("irrelevant, d", [(0, 1), (5, 6), (50, 51)])
def test_gen_quadratic_widths(irrelevant, d):
    assert gen_quadratic(20, n_irrelevant=irrelevant).d == d


def test_gen_quadratic_noise_level():
    data = gen_quadratic(20000, seed=1)
    residual = data.target - data.features[:, 0] ** 2
    assert residual.var() == pytest.approx(8.6, rel=0.05)


def test_resolve_data_specs(tmp_path):
    data = resolve_data("quadratic:n=30,irrelevant=2,seed=5")
    assert data.n == 30 and data.d == 3
    assert np.array_equal(data.target, gen_quadratic(30, n_irrelevant=2, seed=5).target)
    assert resolve_data("linear:n=10,d=4").d == 4
    with pytest.raises(ConfigurationError):
        resolve_data("sin:n=10,width=3")
    with pytest.raises(ConfigurationError):
        resolve_data("sin:seed=1")
    with pytest.raises(ConfigurationError):
        resolve_data("sin:n=ten")
    path = _write(tmp_path, "x,t\n1,2\n")
    assert resolve_data(path, "t").n == 1
