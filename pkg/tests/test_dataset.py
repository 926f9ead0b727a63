from __future__ import annotations

import json

import numpy as np
import pytest

from iotriage.dataset import (
    CategoricalEncoder,
    PreprocessConfig,
    RawTable,
    ColumnSpec,
    canonical_attacks,
    harmonize_label,
    load_csv,
    native_labels,
    preprocess,
    sample_scenario,
    split,
)
from iotriage.errors import DataError
from iotriage.synth import SynthConfig, write_csv


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# load_csv
# ---------------------------------------------------------------------------

def test_load_csv_empty_file_is_rejected(tmp_path):
    path = write(tmp_path, "empty.csv", "")
    with pytest.raises(DataError, match="no header row"):
        load_csv(path, "custom")


def test_load_csv_missing_file_is_rejected(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_csv(tmp_path / "nope.csv", "custom")


def test_load_csv_infers_kinds(tmp_path):
    path = write(tmp_path, "small.csv", "a,b\n1,x\n2.5,y\n3,x\n")
    table = load_csv(path, "custom")
    assert len(table.rows) == 3
    assert [c.kind for c in table.columns] == ["numeric", "categorical"]


def test_load_csv_kind_override(tmp_path):
    path = write(tmp_path, "small.csv", "a,b\n1,x\n2,y\n")
    table = load_csv(path, "custom", kind_overrides={"a": "categorical"})
    assert table.columns[0].kind == "categorical"


def test_load_csv_ragged_row_reports_row_number(tmp_path):
    path = write(tmp_path, "ragged.csv", "a,b\n1,x\n2\n")
    with pytest.raises(DataError, match="ragged row 2"):
        load_csv(path, "custom")


def test_edge_export_has_expected_feature_columns(tmp_path):
    csv_path = write_csv(SynthConfig(source_id="edge-iiotset", rows=200, seed=1), tmp_path / "edge.csv")
    table = load_csv(csv_path, "edge-iiotset")
    names = {c.name for c in table.columns}
    assert {"ip.src_host", "tcp.flags", "http.request.method"} <= names


def test_raw_table_rejects_duplicate_columns():
    with pytest.raises(DataError, match="duplicate column"):
        RawTable(
            columns=[ColumnSpec("a", "numeric"), ColumnSpec("a", "numeric")],
            rows=[],
            source_id="custom",
        )


# ---------------------------------------------------------------------------
# preprocess
# ---------------------------------------------------------------------------

def simple_config(**overrides):
    params = dict(label_column="y", drop_columns=())
    params.update(overrides)
    return PreprocessConfig(**params)


def table(rows, columns=None, source_id="custom"):
    columns = columns or [ColumnSpec("a", "numeric"), ColumnSpec("y", "categorical")]
    return RawTable(columns=columns, rows=rows, source_id=source_id)


def test_preprocess_removes_exact_duplicates():
    t = table([["1", "A"], ["1", "A"], ["2", "B"]])
    ds = preprocess(t, simple_config(dedupe=True))
    assert ds.n_rows == 2
    assert ds.labels == ["A", "B"]


def test_dedupe_judged_after_column_drops():
    cols = [
        ColumnSpec("src_ip", "categorical"),
        ColumnSpec("a", "numeric"),
        ColumnSpec("y", "categorical"),
    ]
    rows = [
        ["10.0.0.1", "1", "A"],
        ["10.0.0.2", "1", "A"],  # duplicate once src_ip is dropped
        ["10.0.0.3", "2", "B"],
    ]
    ds = preprocess(
        table(rows, columns=cols), simple_config(drop_columns=("src_ip",), dedupe=True)
    )
    assert ds.n_rows == 2


def test_preprocess_keeps_duplicates_when_disabled():
    t = table([["1", "A"], ["1", "A"], ["2", "B"]])
    ds = preprocess(t, simple_config(dedupe=False))
    assert ds.n_rows == 3


def test_zscore_uses_population_stddev():
    t = table([["1", "A"], ["2", "B"], ["3", "A"]])
    ds = preprocess(t, simple_config())
    column = ds.feature_matrix[:, 0]
    np.testing.assert_allclose(column, [-1.2247, 0.0, 1.2247], atol=1e-4)
    assert abs(column.mean()) < 1e-12


def test_missing_numeric_imputed_with_median():
    cols = [ColumnSpec("a", "numeric"), ColumnSpec("b", "numeric"), ColumnSpec("y", "categorical")]
    t = table([["1", "", "A"], ["2", "5", "B"], ["3", "7", "A"]], columns=cols)
    ds = preprocess(t, simple_config(standardize=False))
    assert ds.impute_values["b"] == 6.0  # median of {5, 7}
    assert ds.feature_matrix[0, 1] == 6.0


def test_missing_categorical_imputed_with_mode():
    cols = [ColumnSpec("a", "numeric"), ColumnSpec("c", "categorical"), ColumnSpec("y", "categorical")]
    t = table(
        [["1", "x", "A"], ["2", "", "B"], ["3", "x", "A"], ["4", "z", "B"]],
        columns=cols,
    )
    ds = preprocess(t, simple_config(standardize=False))
    assert ds.impute_values["c"] == "x"


def test_label_column_absent_is_rejected():
    t = table([["1", "A"], ["2", "B"]])
    with pytest.raises(DataError, match="label column"):
        preprocess(t, simple_config(label_column="missing"))


def test_entirely_missing_feature_column_is_rejected():
    cols = [ColumnSpec("a", "numeric"), ColumnSpec("b", "numeric"), ColumnSpec("y", "categorical")]
    t = table([["1", "", "A"], ["2", "", "B"]], columns=cols)
    with pytest.raises(DataError, match="entirely missing"):
        preprocess(t, simple_config())


def test_single_class_table_is_rejected():
    t = table([["1", "A"], ["2", "A"]])
    with pytest.raises(DataError, match="single-class"):
        preprocess(t, simple_config())


def test_constant_columns_are_dropped():
    cols = [ColumnSpec("a", "numeric"), ColumnSpec("const", "numeric"), ColumnSpec("y", "categorical")]
    t = table([["1", "9", "A"], ["2", "9", "B"], ["3", "9", "A"]], columns=cols)
    ds = preprocess(t, simple_config())
    assert [c.name for c in ds.columns] == ["a"]


def test_default_edge_config_drops_identifier_columns(tmp_path):
    csv_path = write_csv(SynthConfig(source_id="edge-iiotset", rows=300, seed=2), tmp_path / "edge.csv")
    ds = preprocess(load_csv(csv_path, "edge-iiotset"), PreprocessConfig.for_source("edge-iiotset"))
    kept = {c.name for c in ds.columns}
    assert "ip.src_host" not in kept
    assert "frame.time" not in kept
    assert "tcp.flags" in kept


def test_onehot_vs_ordinal_threshold():
    cols = [ColumnSpec("a", "numeric"), ColumnSpec("c", "categorical"), ColumnSpec("y", "categorical")]
    rows = [[str(i), f"v{i % 4}", "A" if i % 2 else "B"] for i in range(12)]
    t = table(rows, columns=cols)
    ds_onehot = preprocess(t, simple_config(onehot_max_cardinality=4))
    assert ds_onehot.encoders["c"].mode == "onehot"
    assert ds_onehot.n_features == 1 + 4
    ds_ordinal = preprocess(t, simple_config(onehot_max_cardinality=3))
    assert ds_ordinal.encoders["c"].mode == "ordinal"
    assert ds_ordinal.n_features == 2


def test_unseen_category_maps_to_reserved_index_without_error():
    ordinal = CategoricalEncoder("c", ("a", "b"), "ordinal")
    assert ordinal.encode("zzz") == [2.0]
    assert ordinal.encode("a") == [0.0]
    onehot = CategoricalEncoder("c", ("a", "b"), "onehot")
    assert onehot.encode("zzz") == [0.0, 0.0]


def test_preprocess_idempotent_on_own_output():
    cols = [
        ColumnSpec("a", "numeric"),
        ColumnSpec("c", "categorical"),
        ColumnSpec("y", "categorical"),
    ]
    rows = [[str(i), f"v{i % 3}", "A" if i % 2 else "B"] for i in range(10)]
    ds = preprocess(table(rows, columns=cols), simple_config())
    again = preprocess(ds.to_raw_table(), simple_config())
    assert np.array_equal(ds.feature_matrix, again.feature_matrix)
    assert ds.labels == again.labels
    assert ds.feature_names == again.feature_names


def test_config_rejects_tiny_onehot_cardinality():
    with pytest.raises(DataError, match="onehot_max_cardinality"):
        simple_config(onehot_max_cardinality=1)


# ---------------------------------------------------------------------------
# split
# ---------------------------------------------------------------------------

def grid_dataset(counts: dict[str, int]):
    rows = []
    i = 0
    for label, n in counts.items():
        for _ in range(n):
            rows.append([str(i), str(i % 7), label])
            i += 1
    cols = [ColumnSpec("a", "numeric"), ColumnSpec("b", "numeric"), ColumnSpec("y", "categorical")]
    return preprocess(table(rows, columns=cols), simple_config())


def test_split_exact_ratio_single_class():
    from tests.conftest import dataset_from_arrays

    ds = dataset_from_arrays(np.arange(20).reshape(10, 2), ["A"] * 10)
    pair = split(ds, 0.8, seed=1)
    assert pair.train.n_rows == 8
    assert pair.test.n_rows == 2


def test_split_stratification_arithmetic():
    ds = grid_dataset({"A": 50, "B": 10})
    pair = split(ds, 0.8, seed=3)
    assert pair.train.labels.count("A") == 40
    assert pair.train.labels.count("B") == 8
    assert pair.test.labels.count("A") == 10
    assert pair.test.labels.count("B") == 2


def test_split_deterministic_for_seed():
    ds = grid_dataset({"A": 30, "B": 12})
    one = split(ds, 0.75, seed=9)
    two = split(ds, 0.75, seed=9)
    assert np.array_equal(one.train_indices, two.train_indices)
    assert np.array_equal(one.test_indices, two.test_indices)
    other = split(ds, 0.75, seed=10)
    assert not np.array_equal(one.train_indices, other.train_indices)


def test_split_partitions_indices():
    ds = grid_dataset({"A": 23, "B": 17, "C": 5})
    pair = split(ds, 0.8, seed=4)
    union = np.concatenate([pair.train_indices, pair.test_indices])
    assert sorted(union.tolist()) == list(range(ds.n_rows))
    assert set(pair.train_indices) & set(pair.test_indices) == set()


def test_split_per_class_fraction_within_one_row():
    ds = grid_dataset({"A": 37, "B": 11, "C": 8})
    ratio = 0.7
    pair = split(ds, ratio, seed=5)
    for label, total in (("A", 37), ("B", 11), ("C", 8)):
        got = pair.train.labels.count(label)
        assert abs(got - total * ratio) <= 1.0


def test_split_rejects_undersized_class():
    from tests.conftest import dataset_from_arrays

    ds = dataset_from_arrays(np.arange(8).reshape(4, 2), ["A", "A", "A", "B"])
    with pytest.raises(DataError, match="need >= 2"):
        split(ds, 0.5, seed=1)


def test_split_rejects_bad_ratio():
    ds = grid_dataset({"A": 4, "B": 4})
    with pytest.raises(DataError, match="ratio"):
        split(ds, 1.0, seed=1)


def test_split_encodes_test_only_categories_as_unseen():
    # class C has two rows with distinct category values, so whichever row
    # lands in test carries a value the train-side encoder never saw
    cols = [ColumnSpec("a", "numeric"), ColumnSpec("c", "categorical"), ColumnSpec("y", "categorical")]
    rows = [
        ["1", "common", "A"], ["2", "common", "A"], ["3", "common", "A"], ["4", "common", "A"],
        ["5", "only-one", "C"], ["6", "only-two", "C"],
    ]
    ds = preprocess(table(rows, columns=cols), simple_config(standardize=False))
    pair = split(ds, 0.5, seed=0)
    encoder = pair.train.encoders["c"]
    test_categories = {row[1] for row in pair.test.cleaned_rows}
    unseen = test_categories - set(encoder.categories)
    assert unseen, "expected at least one test-only category"
    for value in unseen:
        encoded = encoder.encode(value)
        if encoder.mode == "onehot":
            assert encoded == [0.0] * encoder.width
        else:
            assert encoded == [float(encoder.unseen_index)]
    assert pair.test.feature_matrix.shape[0] == 3


def test_split_refits_scaler_on_train_side_only():
    ds = grid_dataset({"A": 40, "B": 40})
    pair = split(ds, 0.8, seed=7)
    scaled = pair.train.scaler.scaled
    train_cols = pair.train.feature_matrix[:, scaled]
    assert np.all(np.abs(train_cols.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(train_cols.std(axis=0) - 1.0) < 1e-9)
    # test side uses the train-side scaler, so its moments differ in general
    assert pair.train.scaler is pair.test.scaler


# ---------------------------------------------------------------------------
# harmonize_label
# ---------------------------------------------------------------------------

def test_harmonize_syn_flood_variant():
    assert harmonize_label("SYN Flood", "ciciot2023").name == "TCP SYN Flood"
    assert harmonize_label("TCP Flood", "ciciot2023").name == "TCP SYN Flood"


def test_harmonize_spoofing_variants_to_mitm():
    assert harmonize_label("ARP Spoofing", "ciciot2023").name == "MITM"
    assert harmonize_label("DNS Spoofing", "ciciot2023").name == "MITM"
    assert harmonize_label("ARP Spoofing", "ciciot2023").category == "Spoofing"


def test_harmonize_unknown_label_names_it():
    with pytest.raises(DataError, match="Quantum Flood"):
        harmonize_label("Quantum Flood", "edge-iiotset")


def test_harmonize_unknown_source():
    with pytest.raises(DataError, match="unknown source"):
        harmonize_label("XSS", "not-a-dataset")


def test_harmonization_totality_and_surjectivity():
    canon_names = {a.name for a in canonical_attacks()}
    assert len(canon_names) == 13

    edge = native_labels("edge-iiotset", attacks_only=True)
    cic = native_labels("ciciot2023", attacks_only=True)
    assert len(edge) == 13
    assert len(cic) == 15

    mapped = set()
    for source, labels in (("edge-iiotset", edge), ("ciciot2023", cic)):
        for native in labels:
            mapped.add(harmonize_label(native, source).name)
    assert mapped == canon_names

    edge_targets = [harmonize_label(n, "edge-iiotset").name for n in edge]
    assert len(set(edge_targets)) == len(edge_targets)  # injective


def test_benign_labels_harmonize_to_normal():
    assert harmonize_label("Benign", "ciciot2023").name == "Normal"
    assert harmonize_label("Normal", "edge-iiotset").category == "Benign"


# ---------------------------------------------------------------------------
# sample_scenario
# ---------------------------------------------------------------------------

def test_sample_scenario_forced_choice_and_determinism():
    cols = [ColumnSpec("a", "numeric"), ColumnSpec("c", "categorical"), ColumnSpec("y", "categorical")]
    rows = [["1.5", "x", "A"], ["2.5", "z", "B"], ["3.5", "x", "B"]]
    ds = preprocess(table(rows, columns=cols), simple_config())

    only = sample_scenario(ds, "A", seed=99)
    assert json.loads(only) == {"a": 1.5, "c": "x"}

    first = sample_scenario(ds, "B", seed=5)
    second = sample_scenario(ds, "B", seed=5)
    assert first == second


def test_sample_scenario_renders_missing_cells_as_null():
    cols = [ColumnSpec("a", "numeric"), ColumnSpec("b", "numeric"), ColumnSpec("y", "categorical")]
    rows = [["1.5", "", "A"], ["2.5", "7", "B"], ["3.5", "8", "B"]]
    ds = preprocess(table(rows, columns=cols), simple_config())
    record = json.loads(sample_scenario(ds, "A", seed=1))
    assert record == {"a": 1.5, "b": None}


def test_split_extreme_ratio_keeps_both_sides_populated():
    ds = grid_dataset({"A": 5, "B": 5})
    low = split(ds, 0.01, seed=2)
    assert low.train.labels.count("A") == 1
    assert low.train.labels.count("B") == 1
    high = split(ds, 0.99, seed=2)
    assert high.test.labels.count("A") == 1
    assert high.test.labels.count("B") == 1


def test_sample_scenario_absent_label():
    ds = grid_dataset({"A": 3, "B": 3})
    with pytest.raises(DataError, match="not present"):
        sample_scenario(ds, "nope", seed=1)


def test_sample_scenario_preserves_raw_values_and_order(tmp_path):
    csv_path = write_csv(SynthConfig(source_id="edge-iiotset", rows=400, seed=3), tmp_path / "edge.csv")
    ds = preprocess(load_csv(csv_path, "edge-iiotset"), PreprocessConfig.for_source("edge-iiotset"))
    rendered = sample_scenario(ds, "Password Cracking", seed=11)
    record = json.loads(rendered)
    assert list(record) == [c.name for c in ds.columns]
    assert "http.request.method" in record
    assert "http.content_length" in record
    # raw, human-readable values: the method is a string, not an encoding
    assert record["http.request.method"] is None or isinstance(record["http.request.method"], str)
