"""
Trade-off evaluation: accuracy and entropy metrics, non-dominated
filtering, normalization to the unit box and 2-D hypervolume.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DatasetError, ShapeError

logger = logging.getLogger(__name__)

DIRECTIONS = ("max", "min")
OBJECTIVE_KINDS = {"target_acc": "accuracy", "adv_acc": "accuracy", "adv_entropy": "entropy"}
DEFAULT_OBJECTIVES = "target_acc:max,adv_acc:min"


# --- metrics ----------------------------------------------------------------

def metrics(predictions, labels):
    """Accuracy in percent. `predictions` are class indices or [B x k] scores."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels).reshape(-1)
    if predictions.ndim == 2:
        predictions = predictions.argmax(axis=1)
    if len(labels) == 0:
        raise ValueError("accuracy of an empty prediction set is undefined")
    if predictions.shape != labels.shape:
        raise ShapeError(f"{predictions.shape[0]} predictions for {labels.shape[0]} labels")
    return 100.0 * float(np.mean(predictions == labels))


def mean_entropy(probabilities):
    """Mean Shannon entropy of probability rows, in nats."""
    p = np.atleast_2d(np.asarray(probabilities, dtype=np.float64))
    if p.size == 0:
        raise ValueError("mean entropy of zero rows is undefined")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return float(-terms.sum(axis=1).mean())


# --- points and fronts ------------------------------------------------------

@dataclass(frozen=True)
class TradeoffPoint:
    target_acc: float
    adv_acc: float
    adv_entropy: float = math.nan
    variant: str = ""
    alpha: float = math.nan
    seed: int = None
    source: str = ""

    def __post_init__(self):
        for name in ("target_acc", "adv_acc"):
            value = getattr(self, name)
            if not math.isnan(value) and not 0.0 <= value <= 100.0:
                raise ValueError(f"{name} must lie in [0, 100], got {value}")
        if self.adv_entropy < 0:
            raise ValueError(f"adv_entropy must be >= 0, got {self.adv_entropy}")


@dataclass(frozen=True)
class Objective:
    name: str
    direction: str

    def __post_init__(self):
        if self.name not in OBJECTIVE_KINDS:
            raise ValueError(f"unknown objective '{self.name}' (expected one of {', '.join(OBJECTIVE_KINDS)})")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be 'max' or 'min', got '{self.direction}'")

    @property
    def kind(self):
        return OBJECTIVE_KINDS[self.name]


def parse_objectives(text):
    """'target_acc:max,adv_acc:min' -> two Objectives."""
    objectives = []
    for item in text.split(","):
        name, _, direction = item.strip().partition(":")
        objectives.append(Objective(name.strip(), direction.strip() or "max"))
    if len(objectives) != 2:
        raise ValueError(f"exactly two objectives are supported, got {len(objectives)}")
    return tuple(objectives)


@dataclass
class Front:
    points: list
    directions: tuple = ("max", "min")
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.points)


def _signs(directions):
    if len(directions) != 2 or any(d not in DIRECTIONS for d in directions):
        raise ValueError(f"need two directions from {DIRECTIONS}, got {directions}")
    return np.array([1.0 if d == "max" else -1.0 for d in directions])


def nondominated(points, directions=("max", "min"), records=None):
    """
    Keep the points no other point dominates, in input order. Of several
    identical points only the first is kept.
    """
    signs = _signs(directions)
    coords = np.asarray(points, dtype=np.float64).reshape(-1, 2) * signs
    keep = []
    for i, p in enumerate(coords):
        no_worse = np.all(coords >= p, axis=1)
        better = np.any(coords > p, axis=1)
        duplicate_before = np.all(coords[:i] == p, axis=1).any()
        if not (no_worse & better).any() and not duplicate_before:
            keep.append(i)
    kept_records = [records[i] for i in keep] if records is not None else []
    return Front([tuple(map(float, points[i])) for i in keep], tuple(directions), kept_records)


def normalize(points, m, kinds=("accuracy", "accuracy")):
    """Accuracy axes divided by 100, entropy axes by ln m."""
    if m < 2:
        raise ValueError(f"m must be >= 2, got {m}")
    coords = np.asarray(points, dtype=np.float64).reshape(-1, 2).copy()
    ceiling = math.log(m)
    for axis, kind in enumerate(kinds):
        if kind == "entropy":
            too_high = coords[:, axis] > ceiling + 1e-9
            if too_high.any():
                raise ValueError(
                    f"entropy {coords[too_high, axis].max()} exceeds ln {m} = {ceiling:.6f}"
                )
            coords[:, axis] /= ceiling
        else:
            coords[:, axis] /= 100.0
    return coords


def _to_maximized(points, directions):
    coords = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if ((coords < -1e-12) | (coords > 1.0 + 1e-12)).any():
        raise ValueError("hypervolume needs points normalized to the unit box")
    coords = np.clip(coords, 0.0, 1.0)
    for axis, direction in enumerate(directions):
        if direction == "min":
            coords[:, axis] = 1.0 - coords[:, axis]
    return coords


def _unpack(front, directions):
    if isinstance(front, Front):
        return front.points, front.directions
    return front, directions


def hypervolume_2d(front, directions=("max", "min")):
    """
    Area dominated by the front inside the unit box, measured from the worst
    corner: (0, 1) for (max, min) and (0, 0) for (max, max).
    """
    points, directions = _unpack(front, directions)
    _signs(directions)
    coords = _to_maximized(points, directions)
    if len(coords) == 0:
        return 0.0

    volume, best_y = 0.0, 0.0
    for x, y in sorted(map(tuple, coords), key=lambda p: (-p[0], -p[1])):
        if y > best_y:
            volume += x * (y - best_y)
            best_y = y
    return volume


def hypervolume_monte_carlo(front, directions=("max", "min"), samples=1_000_000, seed=0, chunk=100_000):
    """Monte-Carlo estimate of hypervolume_2d; returns (estimate, standard error)."""
    points, directions = _unpack(front, directions)
    _signs(directions)
    coords = _to_maximized(points, directions)
    if len(coords) == 0:
        return 0.0, 0.0

    rng = np.random.default_rng(seed)
    hits, remaining = 0, samples
    while remaining > 0:
        n = min(chunk, remaining)
        u = rng.random((n, 2))
        dominated = ((coords[None, :, 0] >= u[:, None, 0]) & (coords[None, :, 1] >= u[:, None, 1])).any(axis=1)
        hits += int(dominated.sum())
        remaining -= n
    estimate = hits / samples
    return estimate, math.sqrt(estimate * (1.0 - estimate) / samples)


# --- metric files and reports -----------------------------------------------

METRIC_FILE_COLUMNS = ("target_acc", "adv_acc", "adv_entropy", "variant", "alpha", "seed")


def _optional_float(value):
    return float(value) if str(value).strip() else math.nan


def read_metric_files(paths):
    """TradeoffPoints from CSV files with a target_acc, adv_acc[, adv_entropy, ...] header."""
    points = []
    for path in paths:
        try:
            frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise DatasetError(f"{path}: cannot read metric file ({e})") from e
        missing = {"target_acc", "adv_acc"} - set(frame.columns)
        if missing:
            raise DatasetError(f"{path}:1: missing column(s) {', '.join(sorted(missing))}")

        for offset, row in enumerate(frame.to_dict("records")):
            try:
                seed = row.get("seed", "").strip()
                points.append(TradeoffPoint(
                    target_acc=float(row["target_acc"]),
                    adv_acc=_optional_float(row.get("adv_acc", "")),
                    adv_entropy=_optional_float(row.get("adv_entropy", "")),
                    variant=row.get("variant", "").strip(),
                    alpha=_optional_float(row.get("alpha", "")),
                    seed=int(seed) if seed else None,
                    source=str(path),
                ))
            except ValueError as e:
                raise DatasetError(f"{path}:{offset + 2}: {e}") from e
    logger.info("Read %d trade-off point(s) from %d file(s)", len(points), len(paths))
    return points


def write_metric_file(path, points):
    rows = [{name: getattr(p, name) for name in METRIC_FILE_COLUMNS} for p in points]
    frame = pd.DataFrame(rows, columns=list(METRIC_FILE_COLUMNS))
    frame.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")


def evaluate_front(points, objectives, m):
    """Filter, normalize and score TradeoffPoints on an objective pair."""
    directions = tuple(o.direction for o in objectives)
    raw = [tuple(getattr(p, o.name) for o in objectives) for p in points]
    for point, values in zip(points, raw):
        if any(math.isnan(v) for v in values):
            raise DatasetError(
                f"{point.source or 'input'}: point lacks a value for {', '.join(o.name for o in objectives)}"
            )
    front = nondominated(raw, directions, records=list(points))
    unit = normalize(front.points, m, tuple(o.kind for o in objectives))
    normalized = Front([tuple(p) for p in unit], directions, front.records)
    return front, normalized


def write_front_report(path, objectives, front, normalized, m, samples=1_000_000, seed=0):
    """
    CSV of the retained points followed by '#' summary lines holding the
    staircase and Monte-Carlo hypervolume. Returns the summary text.
    """
    hv = hypervolume_2d(normalized)
    hv_mc, stderr = hypervolume_monte_carlo(normalized, samples=samples, seed=seed)
    rows = []
    for record, raw, unit in zip(front.records, front.points, normalized.points):
        rows.append({
            objectives[0].name: raw[0],
            objectives[1].name: raw[1],
            f"{objectives[0].name}_norm": unit[0],
            f"{objectives[1].name}_norm": unit[1],
            "variant": record.variant,
            "alpha": record.alpha,
            "seed": "" if record.seed is None else record.seed,
            "source": record.source,
        })
    frame = pd.DataFrame(rows, columns=[
        objectives[0].name, objectives[1].name,
        f"{objectives[0].name}_norm", f"{objectives[1].name}_norm",
        "variant", "alpha", "seed", "source",
    ])
    frame.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")

    summary = (
        f"objectives: {','.join(f'{o.name}:{o.direction}' for o in objectives)}\n"
        f"sensitiveClasses: {m}\n"
        f"points: {len(front)}\n"
        f"hypervolume: {hv:.6f}\n"
        f"hypervolumeMonteCarlo: {hv_mc:.6f} +/- {stderr:.6f}\n"
    )
    with open(path, "a", encoding="utf-8") as f:
        for line in summary.splitlines():
            f.write(f"# {line}\n")
    return summary
