"""
Labeled datasets: the Gaussian-mixture toy problem, tabular CSV ingestion
driven by a schema file, train/test splits and mini-batching.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .errors import DatasetError, LabelError

logger = logging.getLogger(__name__)

ABSENT = -1  # sensitive label not observed for this row

DEFAULT_MEANS = ((1.0, 1.0), (2.0, 1.5), (1.5, 2.5), (2.5, 3.0))
# (shape, color) per component, in the order of DEFAULT_MEANS
DEFAULT_ASSIGNMENT = ((0, 0), (1, 0), (0, 1), (1, 1))

COLUMN_ROLES = ("feature", "target", "sensitive", "drop")
UNKNOWN_POLICIES = ("error", "zeros")
DELIMITER_NAMES = {"comma": ",", "space": " ", "tab": "\t", "semicolon": ";"}
OVERFLOW = "\x00fields="  # marks rows with more fields than the schema


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    features: np.ndarray
    t: np.ndarray
    s: np.ndarray
    n_classes: int
    m_classes: int
    split: str = "train"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        t = np.asarray(self.t, dtype=np.int64).reshape(-1)
        s = np.asarray(self.s, dtype=np.int64).reshape(-1)
        if features.ndim != 2:
            raise DatasetError(f"features must be a 2-D matrix, got shape {features.shape}")
        if not (len(features) == len(t) == len(s)):
            raise DatasetError(
                f"row counts differ: features {len(features)}, t {len(t)}, s {len(s)}"
            )
        if self.n_classes < 2 or self.m_classes < 2:
            raise ValueError(f"need n >= 2 and m >= 2, got n={self.n_classes}, m={self.m_classes}")
        if len(t) and (t.min() < 0 or t.max() >= self.n_classes):
            raise LabelError(f"target labels must lie in [0, {self.n_classes})")
        present = s[s != ABSENT]
        if len(present) and (present.min() < 0 or present.max() >= self.m_classes):
            raise LabelError(f"sensitive labels must lie in [0, {self.m_classes}) or be absent")
        if np.isnan(features).any():
            raise DatasetError("features contain NaN")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "s", s)

    def __len__(self):
        return len(self.t)

    @property
    def input_dim(self):
        return self.features.shape[1]

    @property
    def labeled_mask(self):
        return self.s != ABSENT

    @property
    def has_sensitive(self):
        return bool(self.labeled_mask.all())

    def subset(self, indices, split=None):
        indices = np.asarray(indices, dtype=np.int64)
        return replace(
            self,
            features=self.features[indices],
            t=self.t[indices],
            s=self.s[indices],
            split=split or self.split,
        )

    def with_features(self, features):
        return replace(self, features=features)

    def strip_sensitive(self):
        return replace(self, s=np.full_like(self.s, ABSENT))


# --- Gaussian mixture -------------------------------------------------------

@dataclass(frozen=True)
class MixtureConfig:
    means: tuple = DEFAULT_MEANS
    sigma: float = 0.3
    samples_per_component: int = 1000
    seed: int = 0
    assignment: tuple = DEFAULT_ASSIGNMENT

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if len(set(map(tuple, self.means))) != len(self.means):
            raise ValueError("component means must be distinct")
        if len(self.assignment) != len(self.means):
            raise ValueError("assignment needs one (shape, color) pair per component")
        if self.samples_per_component < 1:
            raise ValueError("samples_per_component must be >= 1")


def gen_mixture(config=None):
    """Sample the shape/color mixture; t is the shape and s the color of each component."""
    config = config or MixtureConfig()
    rng = np.random.default_rng(config.seed)
    count = config.samples_per_component

    points, shapes, colors = [], [], []
    for mean, (shape, color) in zip(config.means, config.assignment):
        points.append(rng.normal(loc=mean, scale=config.sigma, size=(count, len(mean))))
        shapes.append(np.full(count, shape))
        colors.append(np.full(count, color))

    order = rng.permutation(count * len(config.means))
    return LabeledDataset(
        features=np.vstack(points)[order],
        t=np.concatenate(shapes)[order],
        s=np.concatenate(colors)[order],
        n_classes=max(2, max(a[0] for a in config.assignment) + 1),
        m_classes=max(2, max(a[1] for a in config.assignment) + 1),
        split="all",
        provenance={"source": "mixture", "seed": config.seed, "sigma": config.sigma},
    )


# --- splits and batches -----------------------------------------------------

def split(dataset, fraction, seed):
    """Random disjoint (train, test) partition with `fraction` of the rows in train."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"split fraction must lie in (0, 1), got {fraction}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    n_train = int(round(fraction * len(dataset)))
    return dataset.subset(order[:n_train], "train"), dataset.subset(order[n_train:], "test")


def batches(dataset, batch_size, seed):
    """Shuffled mini-batches covering every row once; the last partial batch is kept."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    for start in range(0, len(order), batch_size):
        yield dataset.subset(order[start:start + batch_size])


# --- schema files -----------------------------------------------------------

@dataclass(frozen=True)
class ColumnSpec:
    name: str
    role: str
    categories: dict = None  # level -> index; None for numeric columns

    @property
    def width(self):
        return max(self.categories.values()) + 1 if self.categories else 1


@dataclass(frozen=True)
class Schema:
    columns: tuple
    delimiter: str = ","
    header: bool = True
    missing: str = None
    comment: str = None
    include_sensitive: bool = False

    def __post_init__(self):
        targets = [c for c in self.columns if c.role == "target"]
        sensitives = [c for c in self.columns if c.role == "sensitive"]
        if len(targets) != 1 or len(sensitives) != 1:
            raise DatasetError("schema needs exactly one target and one sensitive column")
        for column in (targets[0], sensitives[0]):
            if column.categories is None:
                raise DatasetError(f"label column '{column.name}' needs a category list")

    @property
    def names(self):
        return [c.name for c in self.columns]

    @property
    def target(self):
        return next(c for c in self.columns if c.role == "target")

    @property
    def sensitive(self):
        return next(c for c in self.columns if c.role == "sensitive")

    @property
    def feature_columns(self):
        roles = ("feature", "sensitive") if self.include_sensitive else ("feature",)
        return [c for c in self.columns if c.role in roles]

    @property
    def n_classes(self):
        return self.target.width

    @property
    def m_classes(self):
        return self.sensitive.width


def parse_categories(text):
    """'a,b,c' indexes levels by position; 'a=0,b=1,c=0' maps levels explicitly."""
    items = [item.strip() for item in text.split(",") if item.strip()]
    if not items:
        return None
    if all("=" in item for item in items):
        mapping = {}
        for item in items:
            level, index = item.rsplit("=", 1)
            mapping[level.strip()] = int(index)
        return mapping
    if any("=" in item for item in items):
        raise DatasetError(f"mix of listed and mapped categories in '{text}'")
    return {level: i for i, level in enumerate(items)}


def parse_schema(schema_path):
    """Parse a dataset schema file (key: value options plus one column line per column)."""
    options, columns = {}, []
    try:
        with open(schema_path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as e:
        raise DatasetError(f"Cannot read schema {schema_path}: {e}") from e

    for line_no, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#") or ":" not in line:
            continue
        key, value = line.split(":", 1)
        key, value = key.strip(), value.strip()
        if key != "column":
            options[key] = value
            continue
        parts = [p.strip() for p in value.split(":", 2)]
        if len(parts) < 2 or parts[1] not in COLUMN_ROLES:
            raise DatasetError(f"{schema_path}:{line_no}: expected 'column: <name>: <role>[: <categories>]'")
        try:
            categories = parse_categories(parts[2]) if len(parts) == 3 else None
        except ValueError as e:
            raise DatasetError(f"{schema_path}:{line_no}: {e}") from e
        columns.append(ColumnSpec(parts[0], parts[1], categories))

    delimiter = options.get("delimiter", "comma")
    return Schema(
        columns=tuple(columns),
        delimiter=DELIMITER_NAMES.get(delimiter, delimiter),
        header=options.get("header", "true").lower() == "true",
        missing=options.get("missing") or None,
        comment=options.get("comment") or None,
        include_sensitive=options.get("includeSensitive", "false").lower() == "true",
    )


# --- tabular ingestion ------------------------------------------------------

def read_table(path, schema):
    """Read a delimited file into a string DataFrame, checking every row's arity."""
    names = schema.names
    width = len(names)

    def too_many(fields):
        # keep the row so its line number survives; the marker fails the arity check below
        return fields[:width - 1] + [f"{OVERFLOW}{len(fields)}"]

    try:
        frame = pd.read_csv(
            path,
            sep=schema.delimiter,
            header=None,
            names=names,
            index_col=False,
            dtype=str,
            keep_default_na=False,
            skipinitialspace=True,
            skip_blank_lines=False,
            engine="python",
            on_bad_lines=too_many,
        )
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=names, dtype=str)
    except pd.errors.ParserError as e:
        raise DatasetError(f"{path}: {e}") from e
    except OSError as e:
        raise DatasetError(f"Cannot read {path}: {e}") from e

    for name in names:
        frame[name] = frame[name].str.strip()
    frame.index = pd.RangeIndex(1, len(frame) + 1, name="line")
    blank = frame.isna().all(axis=1) | (frame.fillna("") == "").all(axis=1)
    if schema.comment:
        blank |= frame[names[0]].fillna("").str.startswith(schema.comment)
    frame = frame[~blank]

    if schema.header and len(frame):
        line, header = frame.index[0], frame.iloc[0].tolist()
        if header != names:
            raise DatasetError(f"{path}:{line}: header {header} does not match schema columns {names}")
        frame = frame.iloc[1:]

    short = frame.isna().any(axis=1)
    long = frame[names[-1]].fillna("").str.startswith(OVERFLOW)
    if (short | long).any():
        line = frame.index[(short | long).to_numpy()][0]
        found = int(frame.at[line, names[-1]][len(OVERFLOW):]) if long[line] else int(frame.loc[line].notna().sum())
        raise DatasetError(f"{path}:{line}: expected {width} fields, found {found}")

    if schema.missing is not None:
        holes = (frame == schema.missing).any(axis=1)
        if holes.any():
            logger.info("Dropped %d row(s) with missing values from %s", int(holes.sum()), path)
            frame = frame[~holes]
    return frame.reset_index(drop=True)


def _numeric(series, name):
    values = pd.to_numeric(series, errors="coerce")
    if values.isna().any():
        bad = series[values.isna()].iloc[0]
        raise DatasetError(f"column '{name}': non-numeric value '{bad}'")
    return values.to_numpy(dtype=np.float64)


def _labels(series, column):
    codes = series.map(column.categories)
    if codes.isna().any():
        bad = series[codes.isna()].iloc[0]
        raise LabelError(f"column '{column.name}': unknown label '{bad}'")
    return codes.to_numpy(dtype=np.int64)


@dataclass
class Preprocessor:
    """Standardization and one-hot parameters, fitted on training rows only."""

    schema: Schema
    means: dict = field(default_factory=dict)
    stds: dict = field(default_factory=dict)
    fitted_rows: int = 0
    unknown: str = "error"

    @classmethod
    def fit(cls, frame, schema, unknown="error"):
        if unknown not in UNKNOWN_POLICIES:
            raise ValueError(f"unknown-category policy must be one of {UNKNOWN_POLICIES}")
        if frame.empty:
            raise DatasetError("cannot fit preprocessing on zero rows")
        prep = cls(schema, fitted_rows=len(frame), unknown=unknown)
        for column in schema.feature_columns:
            if column.categories is None:
                values = _numeric(frame[column.name], column.name)
                prep.means[column.name] = float(values.mean())
                prep.stds[column.name] = float(values.std())
        return prep

    def _one_hot(self, series, column):
        codes = series.map(column.categories)
        unknown = codes.isna()
        if unknown.any():
            if self.unknown == "error":
                raise DatasetError(f"column '{column.name}': unknown category '{series[unknown].iloc[0]}'")
            logger.warning("column '%s': %d unknown categor(ies) encoded as all-zero rows",
                           column.name, int(unknown.sum()))
        levels = pd.Categorical.from_codes(codes.fillna(-1).astype(np.int64), categories=range(column.width))
        return pd.get_dummies(levels, dtype=np.float64).to_numpy()

    def transform(self, frame, split="train", provenance=None):
        blocks = []
        for column in self.schema.feature_columns:
            if column.categories is None:
                values = _numeric(frame[column.name], column.name)
                std = self.stds[column.name]
                standardized = (values - self.means[column.name]) / std if std > 0 else np.zeros_like(values)
                blocks.append(standardized.reshape(-1, 1))
            else:
                blocks.append(self._one_hot(frame[column.name], column))
        if not blocks:
            raise DatasetError("schema selects no feature columns")

        return LabeledDataset(
            features=np.hstack(blocks),
            t=_labels(frame[self.schema.target.name], self.schema.target),
            s=_labels(frame[self.schema.sensitive.name], self.schema.sensitive),
            n_classes=self.schema.n_classes,
            m_classes=self.schema.m_classes,
            split=split,
            provenance={**(provenance or {}), "preprocessor": self},
        )


def load_csv(path, schema, preprocessor=None, split="train", unknown="error"):
    """
    Load one delimited file. Without a fitted `preprocessor` the file is the
    training split and preprocessing parameters are fitted on it.
    """
    frame = read_table(path, schema)
    if preprocessor is None:
        preprocessor = Preprocessor.fit(frame, schema, unknown)
    return preprocessor.transform(frame, split, {"source": str(path)})


def load_tabular(schema, train_path, test_path=None, fraction=0.8, seed=0, unknown="error"):
    """Train/test datasets from a published partition, or a seeded split of one file."""
    if test_path:
        train = load_csv(train_path, schema, unknown=unknown)
        test = load_csv(test_path, schema, preprocessor=train.provenance["preprocessor"], split="test")
        return train, test

    if not 0.0 < fraction < 1.0:
        raise ValueError(f"split fraction must lie in (0, 1), got {fraction}")
    frame = read_table(train_path, schema)
    order = np.random.default_rng(seed).permutation(len(frame))
    n_train = int(round(fraction * len(frame)))
    train_frame = frame.iloc[order[:n_train]].reset_index(drop=True)
    test_frame = frame.iloc[order[n_train:]].reset_index(drop=True)
    preprocessor = Preprocessor.fit(train_frame, schema, unknown)
    provenance = {"source": str(train_path), "seed": seed}
    return (preprocessor.transform(train_frame, "train", provenance),
            preprocessor.transform(test_frame, "test", provenance))


def export_csv(path, *datasets):
    """Write datasets as x0..x{d-1}, t, s, split columns (absent s left empty)."""
    frames = []
    for dataset in datasets:
        frame = pd.DataFrame(dataset.features, columns=[f"x{i}" for i in range(dataset.input_dim)])
        frame["t"] = dataset.t
        frame["s"] = pd.array(np.where(dataset.labeled_mask, dataset.s, 0), dtype="Int64")
        frame.loc[~dataset.labeled_mask, "s"] = pd.NA
        frame["split"] = dataset.split
        frames.append(frame)
    pd.concat(frames, ignore_index=True).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
