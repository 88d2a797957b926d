"""Flow-record and alert-log ingestion.

Flow CSVs are described by a small INI schema file::

    [columns]
    duration = numeric
    protocol = categorical
    label = label

Column kinds are ``numeric``, ``categorical``, ``label`` and ``meta``. Meta
columns (identifiers, timestamps, endpoints) travel with the dataset but never
become features.
"""

from __future__ import annotations

import configparser
import csv
import json
import logging
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, SchemaError, ShapeError

log = logging.getLogger(__name__)

COLUMN_KINDS = ("numeric", "categorical", "label", "meta")
SEVERITIES = (1, 2, 3)


@dataclass(frozen=True)
class FlowSchema:
    columns: tuple[tuple[str, str], ...]

    def __post_init__(self):
        names = [n for n, _ in self.columns]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate column names: {dupes}")
        for name, kind in self.columns:
            if kind not in COLUMN_KINDS:
                raise SchemaError(f"column {name!r} has unknown kind {kind!r}")
        n_label = sum(1 for _, k in self.columns if k == "label")
        if n_label != 1:
            raise SchemaError(f"schema needs exactly one label column, found {n_label}")

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.columns]

    @property
    def label_column(self) -> str:
        return next(n for n, k in self.columns if k == "label")

    def kind(self, name: str) -> str:
        return dict(self.columns)[name]

    def index(self, name: str) -> int:
        return self.names.index(name)

    @classmethod
    def load(cls, path) -> "FlowSchema":
        parser = configparser.ConfigParser()
        parser.optionxform = str  # keep column-name case
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise SchemaError(f"cannot read schema {path}: {exc}") from exc
        if "columns" not in parser:
            raise SchemaError(f"schema {path} has no [columns] section")
        return cls(tuple((k, v.strip()) for k, v in parser["columns"].items()))

    def save(self, path) -> None:
        lines = ["[columns]"] + [f"{n} = {k}" for n, k in self.columns]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class FlowDataset:
    schema: FlowSchema
    rows: tuple[tuple, ...]

    def __post_init__(self):
        width = len(self.schema.columns)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise DataError(f"row {i} has {len(row)} values, schema has {width}")

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def labels(self) -> list[str]:
        j = self.schema.index(self.schema.label_column)
        return [row[j] for row in self.rows]

    @property
    def label_set(self) -> list[str]:
        return sorted(set(self.labels))

    def column(self, name: str) -> list:
        j = self.schema.index(name)
        return [row[j] for row in self.rows]

    def subset(self, indices: Iterable[int]) -> "FlowDataset":
        return FlowDataset(self.schema, tuple(self.rows[i] for i in indices))


def _parse_cell(value: str, kind: str, row: int, col: str):
    if kind != "numeric":
        return value
    try:
        x = float(value)
    except ValueError:
        raise DataError(f"row {row}, column {col!r}: cannot parse {value!r} as a number") from None
    if not np.isfinite(x):
        raise DataError(f"row {row}, column {col!r}: non-finite value {value!r}")
    return x


def load_flow_csv(path, schema: FlowSchema) -> FlowDataset:
    path = Path(path)
    try:
        fh = path.open(encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot open flow file {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path} is empty; expected a header row") from None
        expected = schema.names
        if header != expected:
            missing = [c for c in expected if c not in header]
            extra = [c for c in header if c not in expected]
            detail = f"missing={missing} unexpected={extra}"
            if not missing and not extra:
                detail = f"column order differs: got {header}"
            raise SchemaError(f"header of {path} does not match schema ({detail})")
        kinds = [k for _, k in schema.columns]
        rows = []
        for lineno, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(expected):
                raise DataError(f"{path}:{lineno}: expected {len(expected)} fields, got {len(record)}")
            rows.append(tuple(_parse_cell(v, k, lineno, c) for v, k, c in zip(record, kinds, expected)))
    return FlowDataset(schema, tuple(rows))


def _format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_flow_csv(ds: FlowDataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ds.schema.names)
        for row in ds.rows:
            writer.writerow([_format_cell(v) for v in row])


@dataclass(frozen=True)
class ColumnMeta:
    source: str
    category: str | None = None  # None for numeric pass-through columns


@dataclass
class FeatureMatrix:
    matrix: np.ndarray
    column_meta: list[ColumnMeta]
    labels: list[str]
    norm_params: np.ndarray | None = None  # shape (n_cols, 2): per-column (min, max)
    unseen_categories: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape


def encode_features(ds: FlowDataset, layout: Sequence[ColumnMeta] | None = None) -> FeatureMatrix:
    """One-hot encode categorical columns and pass numeric columns through.

    Without ``layout`` the categories observed in ``ds`` define the columns
    (sorted per source column). With a ``layout`` from a previous encoding the
    same columns are reproduced; categories absent from the layout yield an
    all-zero group and are counted in ``unseen_categories``.
    """
    schema = ds.schema
    feature_cols = [(n, k) for n, k in schema.columns if k in ("numeric", "categorical")]
    if layout is None:
        if len(ds) == 0:
            raise DataError("cannot encode an empty dataset")
        layout = []
        for name, kind in feature_cols:
            if kind == "numeric":
                layout.append(ColumnMeta(name))
            else:
                layout.extend(ColumnMeta(name, c) for c in sorted(set(ds.column(name))))
    layout = list(layout)

    n = len(ds)
    out = np.zeros((n, len(layout)), dtype=np.float64)
    unseen = 0
    groups: dict[str, dict[str, int]] = {}
    for j, meta in enumerate(layout):
        if meta.source not in schema.names:
            raise SchemaError(f"layout column {meta.source!r} is not in the dataset schema")
        if meta.category is None:
            out[:, j] = np.asarray(ds.column(meta.source), dtype=np.float64)
        else:
            groups.setdefault(meta.source, {})[meta.category] = j
    for source, index in groups.items():
        for i, value in enumerate(ds.column(source)):
            j = index.get(value)
            if j is None:
                unseen += 1
            else:
                out[i, j] = 1.0
    if unseen:
        log.warning("%d categorical values were not seen at fit time; encoded as all-zero groups", unseen)
    return FeatureMatrix(out, layout, ds.labels, None, unseen)


def fit_normalize(fm: FeatureMatrix) -> FeatureMatrix:
    """Record per-column (min, max) and scale into [0, 1].

    One-hot indicator columns are pinned to (0, 1) so they pass through
    unchanged, even when only one category was observed.
    """
    m = fm.matrix
    if m.shape[0] == 0:
        params = np.zeros((m.shape[1], 2))
    else:
        params = np.stack([m.min(axis=0), m.max(axis=0)], axis=1)
    for j, meta in enumerate(fm.column_meta):
        if meta.category is not None:
            params[j] = (0.0, 1.0)
    return apply_normalize(fm, params)


def apply_normalize(fm: FeatureMatrix, params) -> FeatureMatrix:
    """Min-max scale with stored (min, max) pairs; clamps into [0, 1]; constant columns map to 0."""
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 2 or params.shape != (fm.matrix.shape[1], 2):
        raise ShapeError(
            f"normalization parameters of shape {params.shape} do not fit a matrix with "
            f"{fm.matrix.shape[1]} columns"
        )
    lo, hi = params[:, 0], params[:, 1]
    span = hi - lo
    constant = span <= 0
    safe = np.where(constant, 1.0, span)
    scaled = np.where(constant, 0.0, (fm.matrix - lo) / safe)
    scaled = np.clip(scaled, 0.0, 1.0)
    return replace(fm, matrix=scaled, norm_params=params.copy())


@dataclass(frozen=True, order=False)
class Alert:
    timestamp: datetime
    category: str
    severity: int
    src_host: str
    dst_host: str
    stage_hint: str | None = None
    alert_id: str | None = None

    def to_json(self) -> dict:
        d = {
            "timestamp": format_timestamp(self.timestamp),
            "category": self.category,
            "severity": self.severity,
            "src_host": self.src_host,
            "dst_host": self.dst_host,
        }
        if self.stage_hint is not None:
            d["stage_hint"] = self.stage_hint
        if self.alert_id is not None:
            d["id"] = self.alert_id
        return d


def parse_timestamp(text: str) -> datetime:
    ts = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).isoformat(timespec="milliseconds").replace("+00:00", "Z")


_REQUIRED_ALERT_KEYS = ("timestamp", "category", "severity", "src_host", "dst_host")


def _alert_from_record(rec: dict, lineno: int) -> Alert:
    missing = [k for k in _REQUIRED_ALERT_KEYS if k not in rec]
    if missing:
        raise DataError(f"line {lineno}: missing keys {missing}")
    sev = rec["severity"]
    if isinstance(sev, bool) or not isinstance(sev, int) or sev not in SEVERITIES:
        raise DataError(f"line {lineno}: severity {sev!r} is not one of {SEVERITIES}")
    try:
        ts = parse_timestamp(str(rec["timestamp"]))
    except ValueError:
        raise DataError(f"line {lineno}: bad timestamp {rec['timestamp']!r}") from None
    hint = rec.get("stage_hint")
    ident = rec.get("id")
    return Alert(
        ts, str(rec["category"]), sev, str(rec["src_host"]), str(rec["dst_host"]),
        None if hint is None else str(hint), None if ident is None else str(ident),
    )


def load_alerts(path) -> list[Alert]:
    """Read a JSON-lines alert log, sorted by timestamp (stable for ties)."""
    alerts = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open alert log {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise DataError(f"line {lineno}: expected a JSON object")
            alerts.append(_alert_from_record(rec, lineno))
    return sorted(alerts, key=lambda a: a.timestamp)


def write_alerts(alerts: Iterable[Alert], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for a in alerts:
            fh.write(json.dumps(a.to_json(), sort_keys=True) + "\n")
