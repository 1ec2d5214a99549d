"""CSV ingestion, preprocessing, and synthetic data generators.

Preprocessing order: one-hot encode categoricals, drop zero-variance
columns, iteratively remove the worst multicollinear column while any
variance inflation factor exceeds 10, (regression only) drop rows
outside the 1.5 IQR Tukey fences of any feature or the label, then
standardize every surviving column.  All statistics are fitted on the
designated fit rows only and recorded so that inference can replay the
exact transform on new raw data.
"""

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError, DomainError, InputError

SCHEMA_VERSION = 1

CLASSIFICATION = "classification"
REGRESSION = "regression"

VIF_LIMIT = 10.0
TUKEY_FACTOR = 1.5

_MISSING_TOKENS = {"", "na", "nan", "null", "none", "?"}


@dataclass(frozen=True)
class Preprocessing:
    """Fitted transform: encoding, kept columns, fences, standardization."""

    encoding_map: dict            # categorical column -> list of categories
    kept_columns: tuple           # post-encoding column names that survived
    means: np.ndarray
    stds: np.ndarray
    fences: dict | None = None    # column/label -> (lo, hi); regression only

    def to_json_dict(self):
        out = {
            "encoding_map": {k: list(v) for k, v in self.encoding_map.items()},
            "kept_columns": list(self.kept_columns),
            "means": [float(v) for v in self.means],
            "stds": [float(v) for v in self.stds],
        }
        if self.fences is not None:
            out["fences"] = {k: [float(a), float(b)] for k, (a, b) in self.fences.items()}
        return out

    @classmethod
    def from_json_dict(cls, doc):
        return cls(
            encoding_map={k: list(v) for k, v in doc["encoding_map"].items()},
            kept_columns=tuple(doc["kept_columns"]),
            means=np.array(doc["means"], dtype=np.float64),
            stds=np.array(doc["stds"], dtype=np.float64),
            fences={k: (v[0], v[1]) for k, v in doc["fences"].items()}
            if "fences" in doc else None,
        )


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with labels and provenance of its preprocessing."""

    features: np.ndarray
    labels: np.ndarray
    task: str
    column_names: tuple
    categorical: dict = field(default_factory=dict)   # raw col -> list of values per row
    label_mapping: dict | None = None                 # original label -> +/-1
    preprocessing: Preprocessing | None = None
    row_origin: np.ndarray | None = None              # indices into the raw rows

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.float64)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ContractError("features must be (m, d) with matching labels")
        if self.task not in (CLASSIFICATION, REGRESSION):
            raise ContractError(f"unknown task {self.task!r}")
        if len(self.column_names) != X.shape[1]:
            raise ContractError("column_names must match the feature width")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "column_names", tuple(self.column_names))
        if self.row_origin is not None:
            object.__setattr__(self, "row_origin",
                               np.asarray(self.row_origin, dtype=np.int64))

    @property
    def m(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def subset(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        return replace(
            self,
            features=self.features[rows],
            labels=self.labels[rows],
            categorical={k: [v[i] for i in rows] for k, v in self.categorical.items()},
            row_origin=self.row_origin[rows] if self.row_origin is not None else rows,
        )

    def to_json_dict(self):
        out = {
            "schema_version": SCHEMA_VERSION,
            "task": self.task,
            "column_names": list(self.column_names),
            "features": [[float(v) for v in row] for row in self.features],
            "labels": [float(v) for v in self.labels],
        }
        if self.label_mapping is not None:
            out["label_mapping"] = {str(k): v for k, v in self.label_mapping.items()}
        if self.preprocessing is not None:
            out["preprocessing"] = self.preprocessing.to_json_dict()
        return out


def _parse_float(token):
    try:
        v = float(token)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def load_csv(path, label_column, task):
    """Read a headered CSV into a raw Dataset.

    Rows with any missing cell are dropped, then exact duplicate rows
    are dropped.  Columns that fail to parse as numbers become
    categorical and are kept as raw strings until one-hot encoding.
    Classification labels are remapped to -1/+1 with the mapping
    recorded.
    """
    if task not in (CLASSIFICATION, REGRESSION):
        raise InputError(f"unknown task {task!r}")
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise InputError(f"{path} is not valid UTF-8: {exc}") from exc
    if not rows:
        raise InputError(f"{path} is empty; a header row is required")
    header = [h.strip() for h in rows[0]]
    if label_column not in header:
        raise InputError(f"label column {label_column!r} not in header {header}")
    li = header.index(label_column)
    width = len(header)

    kept = []
    for rn, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise InputError(f"{path}:{rn}: expected {width} cells, got {len(row)}")
        cells = [c.strip() for c in row]
        if any(c.lower() in _MISSING_TOKENS for c in cells):
            continue
        kept.append(cells)
    seen = set()
    dedup = []
    for cells in kept:
        key = tuple(cells)
        if key in seen:
            continue
        seen.add(key)
        dedup.append(cells)
    if not dedup:
        raise InputError(f"{path}: no usable rows after dropping missing/duplicate rows")

    feat_names = [h for i, h in enumerate(header) if i != li]
    columns = {h: [] for h in feat_names}
    raw_labels = []
    for cells in dedup:
        raw_labels.append(cells[li])
        for i, h in enumerate(header):
            if i != li:
                columns[h].append(cells[i])

    numeric_cols, categorical = {}, {}
    for h in feat_names:
        parsed = [_parse_float(c) for c in columns[h]]
        if all(v is not None for v in parsed):
            numeric_cols[h] = np.array(parsed, dtype=np.float64)
        else:
            categorical[h] = columns[h]

    label_mapping = None
    if task == CLASSIFICATION:
        parsed = [_parse_float(c) for c in raw_labels]
        if all(v is not None for v in parsed):
            values = sorted(set(parsed))
            if values == [-1.0, 1.0]:
                labels = np.array(parsed)
            elif len(values) == 2:
                label_mapping = {values[0]: -1.0, values[1]: 1.0}
                labels = np.array([label_mapping[v] for v in parsed])
            else:
                raise InputError(
                    f"classification needs exactly two label values, got {values}")
        else:
            values = sorted(set(raw_labels))
            if len(values) != 2:
                raise InputError(
                    f"classification needs exactly two label values, got {values}")
            label_mapping = {values[0]: -1.0, values[1]: 1.0}
            labels = np.array([label_mapping[v] for v in raw_labels])
    else:
        parsed = [_parse_float(c) for c in raw_labels]
        bad = [i for i, v in enumerate(parsed) if v is None]
        if bad:
            raise InputError(f"non-numeric regression label at data row {bad[0] + 1}")
        labels = np.array(parsed, dtype=np.float64)

    names = tuple(h for h in feat_names if h in numeric_cols)
    X = (np.column_stack([numeric_cols[h] for h in names])
         if names else np.zeros((len(dedup), 0)))
    return Dataset(features=X, labels=labels, task=task, column_names=names,
                   categorical=categorical, label_mapping=label_mapping,
                   row_origin=np.arange(len(dedup)))


def _one_hot(ds: Dataset, fit_rows):
    """Expand categorical columns into indicators (categories from fit rows)."""
    if not ds.categorical:
        return ds.features, list(ds.column_names), {}
    blocks = [ds.features]
    names = list(ds.column_names)
    encoding = {}
    for col in sorted(ds.categorical):
        values = ds.categorical[col]
        cats = sorted({values[i] for i in fit_rows})
        encoding[col] = cats
        block = np.zeros((ds.m, len(cats)))
        index = {c: j for j, c in enumerate(cats)}
        for i, v in enumerate(values):
            j = index.get(v)
            if j is not None:
                block[i, j] = 1.0
        blocks.append(block)
        names.extend(f"{col}={c}" for c in cats)
    return np.concatenate(blocks, axis=1), names, encoding


def _vif(Xf):
    """Variance inflation factors of standardized, zero-mean columns."""
    m, d = Xf.shape
    out = np.empty(d)
    for j in range(d):
        target = Xf[:, j]
        others = np.delete(Xf, j, axis=1)
        if others.shape[1] == 0:
            out[j] = 1.0
            continue
        coef, *_ = np.linalg.lstsq(others, target, rcond=None)
        resid = target - others @ coef
        sst = float(target @ target)
        r2 = 1.0 - float(resid @ resid) / sst if sst > 0 else 0.0
        out[j] = np.inf if r2 >= 1.0 else 1.0 / (1.0 - r2)
    return out


def preprocess(raw: Dataset, task=None, fit_rows=None, warn=None):
    """Fit the preprocessing pipeline on fit_rows and apply it everywhere.

    Returns a new Dataset whose ``preprocessing`` field records the
    fitted transform and whose ``row_origin`` maps back into ``raw``.
    """
    task = task or raw.task
    if task != raw.task:
        raise ContractError("preprocess task must match the dataset task")
    if fit_rows is None:
        fit_rows = np.arange(raw.m)
    fit_rows = np.asarray(fit_rows, dtype=np.int64)
    if fit_rows.size == 0:
        raise ContractError("fit_rows must be nonempty")
    emit = warn if warn is not None else (lambda msg: None)

    X, names, encoding = _one_hot(raw, fit_rows)

    keep = []
    for j, name in enumerate(names):
        col = X[fit_rows, j]
        if float(col.std()) < 1e-12 * (1.0 + abs(float(col.mean()))):
            emit(f"dropping zero-variance column {name!r}")
        else:
            keep.append(j)
    if not keep:
        raise InputError("all feature columns were removed (zero variance)")
    X = X[:, keep]
    names = [names[j] for j in keep]

    # iterative worst-first VIF removal; one-shot removal over-prunes when
    # several columns share one collinear direction
    while X.shape[1] >= 2:
        sub = X[fit_rows]
        mu = sub.mean(axis=0)
        sd = sub.std(axis=0)
        vifs = _vif((sub - mu) / sd)
        worst = int(np.argmax(vifs))
        if vifs[worst] <= VIF_LIMIT:
            break
        emit(f"dropping column {names[worst]!r} with VIF {vifs[worst]:.1f}")
        X = np.delete(X, worst, axis=1)
        del names[worst]

    labels = raw.labels
    origin = raw.row_origin if raw.row_origin is not None else np.arange(raw.m)
    fences = None
    if task == REGRESSION:
        fences = {}
        mask = np.ones(X.shape[0], dtype=bool)
        for j, name in enumerate(names):
            q1, q3 = np.percentile(X[fit_rows, j], [25.0, 75.0])
            iqr = q3 - q1
            lo, hi = q1 - TUKEY_FACTOR * iqr, q3 + TUKEY_FACTOR * iqr
            fences[name] = (float(lo), float(hi))
            mask &= (X[:, j] >= lo) & (X[:, j] <= hi)
        q1, q3 = np.percentile(labels[fit_rows], [25.0, 75.0])
        iqr = q3 - q1
        lo, hi = q1 - TUKEY_FACTOR * iqr, q3 + TUKEY_FACTOR * iqr
        fences["__label__"] = (float(lo), float(hi))
        mask &= (labels >= lo) & (labels <= hi)
        dropped = int((~mask).sum())
        if dropped:
            emit(f"dropping {dropped} outlier rows (Tukey fences)")
        X = X[mask]
        labels = labels[mask]
        origin = origin[mask]
        # recompute fit positions inside the filtered matrix
        keep_pos = {old: new for new, old in enumerate(np.flatnonzero(mask))}
        fit_rows = np.array([keep_pos[r] for r in fit_rows if mask[r]], dtype=np.int64)
        if fit_rows.size == 0:
            raise InputError("outlier removal eliminated every fit row")

    mu = X[fit_rows].mean(axis=0)
    sd = X[fit_rows].std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    X = (X - mu) / sd

    meta = Preprocessing(encoding_map=encoding, kept_columns=tuple(names),
                         means=mu, stds=sd, fences=fences)
    return Dataset(features=X, labels=labels, task=task, column_names=tuple(names),
                   categorical={}, label_mapping=raw.label_mapping,
                   preprocessing=meta, row_origin=origin)


def replay_preprocessing(meta: Preprocessing, raw: Dataset, apply_fences=False):
    """Apply a fitted transform to new raw data (no refitting).

    Fences are optional because batch scoring must keep its row count;
    evaluation replays them so metrics refer to the same population the
    model was trained on.
    """
    X, names, _ = _one_hot_with(meta.encoding_map, raw)
    index = {n: j for j, n in enumerate(names)}
    missing = [n for n in meta.kept_columns if n not in index]
    if missing:
        raise InputError(f"input lacks columns required by the model: {missing}")
    cols = [index[n] for n in meta.kept_columns]
    X = X[:, cols]
    labels = raw.labels
    origin = raw.row_origin if raw.row_origin is not None else np.arange(raw.m)
    if apply_fences and meta.fences is not None:
        mask = np.ones(X.shape[0], dtype=bool)
        for j, name in enumerate(meta.kept_columns):
            lo, hi = meta.fences[name]
            mask &= (X[:, j] >= lo) & (X[:, j] <= hi)
        lo, hi = meta.fences["__label__"]
        mask &= (labels >= lo) & (labels <= hi)
        X = X[mask]
        labels = labels[mask]
        origin = origin[mask]
    X = (X - meta.means) / meta.stds
    return Dataset(features=X, labels=labels, task=raw.task,
                   column_names=meta.kept_columns, categorical={},
                   label_mapping=raw.label_mapping, preprocessing=meta,
                   row_origin=origin)


def _one_hot_with(encoding_map, ds: Dataset):
    blocks = [ds.features]
    names = list(ds.column_names)
    for col in sorted(encoding_map):
        cats = encoding_map[col]
        values = ds.categorical.get(col)
        if values is None:
            raise InputError(f"input lacks categorical column {col!r}")
        block = np.zeros((ds.m, len(cats)))
        index = {c: j for j, c in enumerate(cats)}
        for i, v in enumerate(values):
            j = index.get(v)
            if j is not None:
                block[i, j] = 1.0
        blocks.append(block)
        names.extend(f"{col}={c}" for c in cats)
    return np.concatenate(blocks, axis=1), names, encoding_map


def transform_points(meta: Preprocessing, points):
    """Map raw-coordinate points (e.g. known centers) into model space.

    Only numeric original columns are supported; the points must be
    given over the kept columns in their original order.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.shape[1] != len(meta.kept_columns):
        raise InputError(
            f"points have {pts.shape[1]} coordinates; the model keeps "
            f"{len(meta.kept_columns)} columns {list(meta.kept_columns)}")
    return (pts - meta.means) / meta.stds


# ------------------------------------------------------------- synthetic

SCENARIOS = ("clf_case1", "clf_case2", "reg_case1", "reg_case2")

_DEFAULT_SIZES = {"clf_case1": 1062, "clf_case2": 1277,
                  "reg_case1": 1058, "reg_case2": 1411}
_DEFAULT_NOISE = {"clf_case1": 0.08, "clf_case2": 0.02,
                  "reg_case1": 0.05, "reg_case2": 0.05}


@dataclass(frozen=True)
class SyntheticSpec:
    scenario: str
    size: int | None = None
    noise: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise DomainError(f"unknown scenario {self.scenario!r}; "
                              f"choose from {SCENARIOS}")
        size = self.size if self.size is not None else _DEFAULT_SIZES[self.scenario]
        noise = self.noise if self.noise is not None else _DEFAULT_NOISE[self.scenario]
        if size < 1:
            raise DomainError("size must be positive")
        if noise < 0:
            raise DomainError("noise must be nonnegative")
        object.__setattr__(self, "size", int(size))
        object.__setattr__(self, "noise", float(noise))


def _sample_disc(rng, center, radius, count):
    r = radius * np.sqrt(rng.uniform(0.0, 1.0, count))
    th = rng.uniform(0.0, 2.0 * np.pi, count)
    return np.column_stack([center[0] + r * np.cos(th), center[1] + r * np.sin(th)])


def _sample_background(rng, box, discs, margin, count):
    pts = np.empty((count, 2))
    got = 0
    while got < count:
        cand = rng.uniform([box[0], box[2]], [box[1], box[3]], (4 * count, 2))
        ok = np.ones(cand.shape[0], dtype=bool)
        for c, r in discs:
            ok &= np.linalg.norm(cand - np.asarray(c), axis=1) > r * margin
        cand = cand[ok]
        take = min(count - got, cand.shape[0])
        pts[got:got + take] = cand[:take]
        got += take
    return pts


def _clf_scenario(spec, centers, radii, directions, offsets, bg_w, bg_b, box):
    rng = np.random.default_rng(spec.seed)
    n = len(centers)
    frac_loc = 0.6 / n
    counts = [int(frac_loc * spec.size)] * n
    counts.append(spec.size - sum(counts))
    X_parts, y_parts = [], []
    for i, (c, r) in enumerate(zip(centers, radii)):
        pts = _sample_disc(rng, c, r, counts[i])
        a = np.asarray(directions[i])
        lab = np.where((pts - np.asarray(c)) @ a + offsets[i] >= 0.0, 1.0, -1.0)
        X_parts.append(pts)
        y_parts.append(lab)
    bg = _sample_background(rng, box, list(zip(centers, radii)), 1.15, counts[-1])
    lab = np.where(bg @ np.asarray(bg_w) + bg_b >= 0.0, 1.0, -1.0)
    X_parts.append(bg)
    y_parts.append(lab)
    X = np.concatenate(X_parts)
    y = np.concatenate(y_parts)
    flip = rng.uniform(0.0, 1.0, spec.size) < spec.noise
    y = np.where(flip, -y, y)
    perm = rng.permutation(spec.size)
    X, y = X[perm], y[perm]
    truth = {
        "scenario": spec.scenario,
        "task": CLASSIFICATION,
        "centers": [list(map(float, c)) for c in centers],
        "radii": [float(r) for r in radii],
        "local_weights": [list(map(float, a)) for a in directions],
        "local_biases": [float(b) for b in offsets],
        "background_weights": list(map(float, bg_w)),
        "background_bias": float(bg_b),
        "noise": spec.noise,
        "seed": spec.seed,
    }
    ds = Dataset(features=X, labels=y, task=CLASSIFICATION,
                 column_names=("x1", "x2"), row_origin=np.arange(spec.size))
    return ds, truth


def _reg_scenario(spec, centers, radii, slopes, intercepts, bg_slope, bg_b, span):
    rng = np.random.default_rng(spec.seed)
    x = rng.uniform(span[0], span[1], spec.size)
    y = bg_slope * x + bg_b
    for c, r, a, b in zip(centers, radii, slopes, intercepts):
        inside = np.abs(x - c) <= r
        y = np.where(inside, a * (x - c) + b, y)
    y = y + rng.normal(0.0, spec.noise, spec.size)
    truth = {
        "scenario": spec.scenario,
        "task": REGRESSION,
        "centers": [[float(c)] for c in centers],
        "radii": [float(r) for r in radii],
        "local_weights": [[float(a)] for a in slopes],
        "local_biases": [float(b) for b in intercepts],
        "background_weights": [float(bg_slope)],
        "background_bias": float(bg_b),
        "noise": spec.noise,
        "seed": spec.seed,
    }
    ds = Dataset(features=x[:, None], labels=y, task=REGRESSION,
                 column_names=("x1",), row_origin=np.arange(spec.size))
    return ds, truth


def generate(spec: SyntheticSpec):
    """Build a synthetic dataset plus its ground-truth metadata."""
    if spec.scenario == "clf_case1":
        return _clf_scenario(
            spec,
            centers=[(-1.0, 0.0), (1.0, 0.0)],
            radii=[0.6, 0.6],
            directions=[(0.0, 1.0), (0.70710678, 0.70710678)],
            offsets=[0.0, 0.05],
            bg_w=(0.70710678, -0.70710678), bg_b=0.25,
            box=(-2.8, 2.8, -1.9, 1.9),
        )
    if spec.scenario == "clf_case2":
        return _clf_scenario(
            spec,
            centers=[(-1.5, 0.8), (1.5, 0.8), (0.0, -1.2)],
            radii=[0.55, 0.55, 0.55],
            directions=[(0.0, 1.0), (1.0, 0.0), (0.70710678, 0.70710678)],
            offsets=[0.0, 0.05, -0.05],
            bg_w=(-0.5547002, 0.83205029), bg_b=0.15,
            box=(-3.0, 3.0, -2.4, 2.4),
        )
    if spec.scenario == "reg_case1":
        return _reg_scenario(
            spec,
            centers=[0.8], radii=[0.7], slopes=[2.5], intercepts=[0.5],
            bg_slope=0.4, bg_b=-0.2, span=(-3.0, 3.0),
        )
    return _reg_scenario(
        spec,
        centers=[-1.6, 1.6], radii=[0.7, 0.7], slopes=[2.2, -2.4],
        intercepts=[0.4, 0.6], bg_slope=0.3, bg_b=0.0, span=(-3.2, 3.2),
    )


def write_csv(ds: Dataset, path, label_column="y"):
    """RFC-4180 CSV with header; features then the label column."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(ds.column_names) + [label_column])
        for row, lab in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in row] + [repr(float(lab))])


def write_truth(truth, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"schema_version": SCHEMA_VERSION, **truth}, fh, indent=2)
        fh.write("\n")
