"""Flow-record ingestion and preparation.

Loads Edge-IIoTset / CICIoT2023-style CSV exports, cleans and encodes them
into model-ready matrices, harmonizes dataset-native class names onto the
shared attack ontology, splits train/test with stratification, and samples
representative attack instances for prompt construction.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from importlib import resources as importlib_resources
from pathlib import Path

import numpy as np

from .errors import DataError

KNOWN_SOURCES = ("edge-iiotset", "ciciot2023")

DEFAULT_LABEL_COLUMNS = {
    "edge-iiotset": "Attack_type",
    "ciciot2023": "label",
}

# Identifier-like columns dropped by default: endpoint identity, capture
# timestamps, and free-form payloads leak who/when, not traffic behavior.
DEFAULT_DROP_COLUMNS = {
    "edge-iiotset": (
        "frame.time",
        "ip.src_host",
        "ip.dst_host",
        "arp.src.proto_ipv4",
        "arp.dst.proto_ipv4",
        "icmp.transmit_timestamp",
        "http.file_data",
        "http.request.full_uri",
        "tcp.options",
        "tcp.payload",
        "mqtt.msg",
    ),
    "ciciot2023": (
        "flow_id",
        "timestamp",
        "src_ip",
        "dst_ip",
    ),
}

_MISSING_MARKERS = {"", "nan", "na", "null", "none"}

_label_map_cache: dict | None = None


def is_missing(cell: str) -> bool:
    return cell.strip().lower() in _MISSING_MARKERS


def _parse_number(cell: str) -> float | None:
    try:
        value = float(cell)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str  # numeric | categorical | text

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical", "text"):
            raise DataError(f"unknown column kind: {self.kind!r}")


@dataclass
class RawTable:
    """A parsed CSV: typed columns plus rows of raw string cells."""

    columns: list[ColumnSpec]
    rows: list[list[str]]
    source_id: str

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise DataError("duplicate column names in table")
        width = len(self.columns)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise DataError(f"row {i + 1} has {len(row)} cells, expected {width}")

    def column_index(self, name: str) -> int:
        for i, col in enumerate(self.columns):
            if col.name == name:
                return i
        raise DataError(f"no such column: {name}")


def load_csv(
    path: str | Path,
    source_id: str,
    kind_overrides: dict[str, str] | None = None,
) -> RawTable:
    """Parse a comma-delimited UTF-8 CSV with a header row into a RawTable.

    Column kinds are inferred: numeric when every non-missing cell parses as
    a finite number, categorical otherwise. ``kind_overrides`` pins kinds by
    column name. Ragged rows are rejected with their 1-based data row number.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"no header row in {path}") from None
        if not any(cell.strip() for cell in header):
            raise DataError(f"no header row in {path}")
        header = [cell.strip() for cell in header]
        rows: list[list[str]] = []
        for lineno, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise DataError(
                    f"ragged row {lineno} in {path}: {len(row)} cells, expected {len(header)}"
                )
            rows.append([cell.strip() for cell in row])

    overrides = kind_overrides or {}
    columns = []
    for j, name in enumerate(header):
        if name in overrides:
            kind = overrides[name]
        else:
            cells = [row[j] for row in rows if not is_missing(row[j])]
            numeric = bool(cells) and all(_parse_number(c) is not None for c in cells)
            kind = "numeric" if numeric else "categorical"
        columns.append(ColumnSpec(name, kind))

    return RawTable(columns=columns, rows=rows, source_id=source_id)


@dataclass(frozen=True)
class PreprocessConfig:
    label_column: str
    drop_columns: tuple[str, ...] = ()
    onehot_max_cardinality: int = 32
    impute_numeric: str = "median"
    impute_categorical: str = "mode"
    dedupe: bool = True
    standardize: bool = True

    def __post_init__(self):
        if self.onehot_max_cardinality < 2:
            raise DataError("onehot_max_cardinality must be >= 2")
        if self.impute_numeric != "median" or self.impute_categorical != "mode":
            raise DataError("unsupported impute strategy")

    @classmethod
    def for_source(cls, source_id: str, **overrides) -> "PreprocessConfig":
        """Default config for a known dataset schema."""
        if source_id not in KNOWN_SOURCES:
            raise DataError(f"unknown source_id: {source_id!r}")
        params = dict(
            label_column=DEFAULT_LABEL_COLUMNS[source_id],
            drop_columns=DEFAULT_DROP_COLUMNS[source_id],
        )
        params.update(overrides)
        return cls(**params)


@dataclass(frozen=True)
class CategoricalEncoder:
    """Fitted category map for one column.

    One-hot columns emit a 0/1 vector (unseen values encode to all zeros);
    ordinal columns emit a single index with ``len(categories)`` reserved
    for values unseen at fit time.
    """

    column: str
    categories: tuple[str, ...]
    mode: str  # onehot | ordinal

    @property
    def width(self) -> int:
        return len(self.categories) if self.mode == "onehot" else 1

    @property
    def unseen_index(self) -> int:
        return len(self.categories)

    def feature_names(self) -> list[str]:
        if self.mode == "onehot":
            return [f"{self.column}={cat}" for cat in self.categories]
        return [self.column]

    def encode(self, value: str) -> list[float]:
        if self.mode == "onehot":
            out = [0.0] * len(self.categories)
            try:
                out[self.categories.index(value)] = 1.0
            except ValueError:
                pass  # unseen: all zeros
            return out
        try:
            return [float(self.categories.index(value))]
        except ValueError:
            return [float(self.unseen_index)]


@dataclass(frozen=True)
class FeatureScaler:
    """Per-feature (mean, stddev) over the fit population.

    Only features flagged ``scaled`` are z-scored; stddev uses the population
    convention. Features with zero variance pass through unscaled.
    """

    mean: np.ndarray
    std: np.ndarray
    scaled: np.ndarray  # bool mask over expanded features

    def apply(self, matrix: np.ndarray) -> np.ndarray:
        out = matrix.astype(np.float64, copy=True)
        idx = np.flatnonzero(self.scaled)
        out[:, idx] = (out[:, idx] - self.mean[idx]) / self.std[idx]
        return out


@dataclass
class _FittedPipeline:
    impute_values: dict[str, object]  # column -> median (float) or mode (str)
    encoders: dict[str, CategoricalEncoder]
    scaler: FeatureScaler | None
    feature_names: tuple[str, ...]


@dataclass
class LabeledDataset:
    """A cleaned, encoded dataset with the state needed to re-apply itself.

    ``feature_matrix`` holds the model-ready values; ``cleaned_rows`` keeps
    the pre-impute raw cells (feature columns only) so splits can re-fit
    imputation/encoding/scaling on the train side and so scenario sampling
    can show human-readable traffic.
    """

    feature_matrix: np.ndarray
    labels: list[str]
    class_set: tuple[str, ...]
    encoders: dict[str, CategoricalEncoder]
    scaler: FeatureScaler | None
    source_id: str
    feature_names: tuple[str, ...]
    columns: tuple[ColumnSpec, ...]
    cleaned_rows: list[list[str]]
    impute_values: dict[str, object] = field(default_factory=dict)
    config: PreprocessConfig | None = None

    @property
    def n_rows(self) -> int:
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return int(self.feature_matrix.shape[1])

    def to_raw_table(self) -> RawTable:
        """Reconstruct a RawTable (cleaned features + label column)."""
        assert self.config is not None
        cols = list(self.columns) + [ColumnSpec(self.config.label_column, "categorical")]
        rows = [list(r) + [lab] for r, lab in zip(self.cleaned_rows, self.labels)]
        return RawTable(columns=cols, rows=rows, source_id=self.source_id)


@dataclass
class SplitPair:
    train: LabeledDataset
    test: LabeledDataset
    ratio: float
    seed: int
    train_indices: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))
    test_indices: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))


def _clean_table(
    table: RawTable, config: PreprocessConfig
) -> tuple[list[ColumnSpec], list[list[str]], list[str]]:
    """Drop configured/constant columns, split off labels, dedupe rows."""
    names = [c.name for c in table.columns]
    if config.label_column not in names:
        raise DataError(f"label column not found: {config.label_column!r}")
    label_idx = names.index(config.label_column)

    drop = set(config.drop_columns) - {config.label_column}
    keep_idx = [
        j for j, col in enumerate(table.columns) if col.name not in drop and j != label_idx
    ]

    rows = [r for r in table.rows if not is_missing(r[label_idx])]
    if config.dedupe:
        # duplicates are judged after column drops, so rows differing only
        # in a dropped identifier still collapse
        seen: set[tuple[str, ...]] = set()
        deduped = []
        for row in rows:
            key = tuple(row[j] for j in keep_idx) + (row[label_idx],)
            if key not in seen:
                seen.add(key)
                deduped.append(row)
        rows = deduped

    # Entirely-missing feature columns are unusable; constant columns carry
    # no signal and are removed. Both are judged on the cleaned rows.
    kept: list[int] = []
    for j in keep_idx:
        cells = [r[j] for r in rows]
        non_missing = [c for c in cells if not is_missing(c)]
        if not non_missing:
            raise DataError(f"feature column entirely missing: {table.columns[j].name!r}")
        if len(set(non_missing)) == 1 and len(non_missing) == len(cells):
            continue  # constant
        kept.append(j)

    columns = [table.columns[j] for j in kept]
    feature_rows = [[r[j] for j in kept] for r in rows]
    labels = [r[label_idx] for r in rows]
    return columns, feature_rows, labels


def _fit_pipeline(
    columns: list[ColumnSpec], rows: list[list[str]], config: PreprocessConfig
) -> _FittedPipeline:
    impute_values: dict[str, object] = {}
    encoders: dict[str, CategoricalEncoder] = {}
    imputed = _impute_fit(columns, rows, impute_values)

    feature_names: list[str] = []
    for j, col in enumerate(columns):
        if col.kind == "numeric":
            feature_names.append(col.name)
        else:
            values = sorted({row[j] for row in imputed})
            mode = "onehot" if len(values) <= config.onehot_max_cardinality else "ordinal"
            enc = CategoricalEncoder(col.name, tuple(values), mode)
            encoders[col.name] = enc
            feature_names.extend(enc.feature_names())

    scaler = None
    if config.standardize:
        matrix = _encode_rows(columns, imputed, encoders)
        mean = matrix.mean(axis=0)
        std = matrix.std(axis=0)  # population stddev
        # Every expanded feature with variance is z-scored, encoded ones
        # included; zero-variance columns (possible on a split side) pass
        # through untouched.
        scaler = FeatureScaler(mean=mean, std=std, scaled=std > 0)

    return _FittedPipeline(impute_values, encoders, scaler, tuple(feature_names))


def _impute_fit(
    columns: list[ColumnSpec], rows: list[list[str]], out_values: dict[str, object]
) -> list[list[str]]:
    """Compute per-column fill values on these rows and apply them."""
    for j, col in enumerate(columns):
        cells = [r[j] for r in rows if not is_missing(r[j])]
        if col.kind == "numeric":
            numbers = [_parse_number(c) for c in cells]
            numbers = [x for x in numbers if x is not None]
            if not numbers:
                raise DataError(f"feature column entirely missing: {col.name!r}")
            out_values[col.name] = float(np.median(numbers))
        else:
            counts: dict[str, int] = {}
            for c in cells:
                counts[c] = counts.get(c, 0) + 1
            if not counts:
                raise DataError(f"feature column entirely missing: {col.name!r}")
            best = max(sorted(counts), key=lambda c: counts[c])
            out_values[col.name] = best
    return _impute_apply(columns, rows, out_values)


def _impute_apply(
    columns: list[ColumnSpec], rows: list[list[str]], values: dict[str, object]
) -> list[list[str]]:
    out = []
    for row in rows:
        new = list(row)
        for j, col in enumerate(columns):
            if is_missing(new[j]):
                fill = values[col.name]
                new[j] = repr(fill) if isinstance(fill, float) else str(fill)
            elif col.kind == "numeric" and _parse_number(new[j]) is None:
                new[j] = repr(values[col.name])
        out.append(new)
    return out


def _encode_rows(
    columns: list[ColumnSpec],
    imputed_rows: list[list[str]],
    encoders: dict[str, CategoricalEncoder],
) -> np.ndarray:
    width = sum(
        1 if c.kind == "numeric" else encoders[c.name].width for c in columns
    )
    matrix = np.empty((len(imputed_rows), width), dtype=np.float64)
    for i, row in enumerate(imputed_rows):
        k = 0
        for j, col in enumerate(columns):
            if col.kind == "numeric":
                matrix[i, k] = _parse_number(row[j])
                k += 1
            else:
                enc = encoders[col.name]
                matrix[i, k : k + enc.width] = enc.encode(row[j])
                k += enc.width
    return matrix


def _apply_pipeline(
    columns: list[ColumnSpec], rows: list[list[str]], fitted: _FittedPipeline
) -> np.ndarray:
    imputed = _impute_apply(columns, rows, fitted.impute_values)
    matrix = _encode_rows(columns, imputed, fitted.encoders)
    if fitted.scaler is not None:
        matrix = fitted.scaler.apply(matrix)
    return matrix


def preprocess(table: RawTable, config: PreprocessConfig) -> LabeledDataset:
    """Clean, impute, encode, and optionally standardize a raw table.

    Raises:
        DataError: absent label column, an entirely-missing feature column,
            or fewer than 2 distinct classes after cleaning.
    """
    columns, feature_rows, labels = _clean_table(table, config)
    class_set = tuple(sorted(set(labels)))
    if len(class_set) < 2:
        raise DataError("single-class table: need at least 2 distinct labels")

    fitted = _fit_pipeline(columns, feature_rows, config)
    matrix = _apply_pipeline(columns, feature_rows, fitted)
    return LabeledDataset(
        feature_matrix=matrix,
        labels=labels,
        class_set=class_set,
        encoders=fitted.encoders,
        scaler=fitted.scaler,
        source_id=table.source_id,
        feature_names=fitted.feature_names,
        columns=tuple(columns),
        cleaned_rows=feature_rows,
        impute_values=fitted.impute_values,
        config=config,
    )


def split(ds: LabeledDataset, ratio: float, seed: int) -> SplitPair:
    """Stratified train/test split; imputer/encoders/scaler re-fit on train.

    Per class, round(n * ratio) rows go to train (clamped so both sides keep
    at least one row). Deterministic for a given seed.
    """
    if not 0.0 < ratio < 1.0:
        raise DataError(f"split ratio must be in (0, 1), got {ratio}")
    by_class: dict[str, list[int]] = {}
    for i, label in enumerate(ds.labels):
        by_class.setdefault(label, []).append(i)
    for label, idxs in by_class.items():
        if len(idxs) < 2:
            raise DataError(f"class {label!r} has {len(idxs)} row(s); need >= 2 to stratify")

    rng = np.random.default_rng(seed)
    train_idx: list[int] = []
    test_idx: list[int] = []
    for label in sorted(by_class):
        idxs = np.array(by_class[label])
        rng.shuffle(idxs)
        n_train = int(math.floor(len(idxs) * ratio + 0.5))
        n_train = min(max(n_train, 1), len(idxs) - 1)
        train_idx.extend(idxs[:n_train].tolist())
        test_idx.extend(idxs[n_train:].tolist())
    train_idx.sort()
    test_idx.sort()

    assert ds.config is not None
    columns = list(ds.columns)
    train_rows = [ds.cleaned_rows[i] for i in train_idx]
    test_rows = [ds.cleaned_rows[i] for i in test_idx]
    fitted = _fit_pipeline(columns, train_rows, ds.config)

    def build(rows: list[list[str]], labels: list[str]) -> LabeledDataset:
        return LabeledDataset(
            feature_matrix=_apply_pipeline(columns, rows, fitted),
            labels=labels,
            class_set=ds.class_set,
            encoders=fitted.encoders,
            scaler=fitted.scaler,
            source_id=ds.source_id,
            feature_names=fitted.feature_names,
            columns=ds.columns,
            cleaned_rows=rows,
            impute_values=fitted.impute_values,
            config=ds.config,
        )

    train = build(train_rows, [ds.labels[i] for i in train_idx])
    test = build(test_rows, [ds.labels[i] for i in test_idx])
    return SplitPair(
        train=train,
        test=test,
        ratio=ratio,
        seed=seed,
        train_indices=np.array(train_idx),
        test_indices=np.array(test_idx),
    )


@dataclass(frozen=True)
class CanonicalAttack:
    """One of the 13 shared attack types, or Normal."""

    name: str
    category: str


def _label_map() -> dict:
    global _label_map_cache
    if _label_map_cache is None:
        text = (
            importlib_resources.files("iotriage.resources")
            .joinpath("label_map.json")
            .read_text(encoding="utf-8")
        )
        _label_map_cache = json.loads(text)
    return _label_map_cache


def canonical_attacks(include_benign: bool = False) -> tuple[CanonicalAttack, ...]:
    """The shared attack ontology, in a stable order."""
    canon = _label_map()["canonical"]
    out = [
        CanonicalAttack(name, category)
        for name, category in canon.items()
        if include_benign or category != "Benign"
    ]
    return tuple(out)


def native_labels(source_id: str, attacks_only: bool = True) -> tuple[str, ...]:
    """Native class names of a dataset, in mapping-file order."""
    sources = _label_map()["sources"]
    if source_id not in sources:
        raise DataError(f"unknown source_id: {source_id!r}")
    canon = _label_map()["canonical"]
    out = []
    for native, canonical in sources[source_id].items():
        if attacks_only and canon[canonical] == "Benign":
            continue
        out.append(native)
    return tuple(out)


def harmonize_label(native: str, source_id: str) -> CanonicalAttack:
    """Map a dataset-native class name onto the shared ontology.

    Raises:
        DataError: unknown source or unknown native label (never a silent
            fallback).
    """
    mapping = _label_map()
    sources = mapping["sources"]
    if source_id not in sources:
        raise DataError(f"unknown source_id: {source_id!r}")
    try:
        canonical = sources[source_id][native]
    except KeyError:
        raise DataError(
            f"unknown native label {native!r} for source {source_id!r}"
        ) from None
    return CanonicalAttack(canonical, mapping["canonical"][canonical])


def dump_label_map() -> str:
    """The shipped label-mapping resource, as JSON text."""
    return json.dumps(_label_map(), indent=2)


def sample_scenario(ds: LabeledDataset, native_label: str, seed: int) -> str:
    """Pick one instance of a class and render it as a JSON feature object.

    Values are the raw pre-standardization cells (numbers as numbers,
    missing as null) with keys in the dataset's column order, so prompts
    show human-readable traffic. Deterministic for a given seed.
    """
    indices = [i for i, label in enumerate(ds.labels) if label == native_label]
    if not indices:
        raise DataError(f"label {native_label!r} not present in dataset")
    rng = np.random.default_rng(seed)
    row = ds.cleaned_rows[indices[int(rng.integers(len(indices)))]]

    record: dict[str, object] = {}
    for j, col in enumerate(ds.columns):
        cell = row[j]
        if is_missing(cell):
            record[col.name] = None
        elif col.kind == "numeric":
            value = _parse_number(cell)
            if value is None:
                record[col.name] = None
            elif value == int(value) and abs(value) < 1e15:
                record[col.name] = int(value)
            else:
                record[col.name] = value
        else:
            record[col.name] = cell
    return json.dumps(record, indent=2, ensure_ascii=False)
