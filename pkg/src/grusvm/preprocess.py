"""Turn delimited traffic-log records into compact one-hot encoded samples.

Continuous columns are standardized with the column mean and population
standard deviation, then cut into deciles of the standardized training values.
Categorical columns map to their rank in the sorted set of observed values.
Each used column becomes one one-hot group; groups are stored compactly as the
index of the hot entry.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

KINDS = ("continuous", "categorical", "label", "ignored")
N_BINS = 10
DATASET_MAGIC = "#grusvm-dataset 1"
STATS_FORMAT = "grusvm-stats/1"
_DELIMS = {"tab": "\t", "comma": ",", "space": " ", "semicolon": ";", "pipe": "|"}


class PreprocessError(ValueError):
    pass


@dataclass
class RecordSchema:
    columns: list[tuple[str, str]]
    delimiter: str = "\t"
    label_positive_values: frozenset[str] = frozenset()

    def __post_init__(self):
        for name, kind in self.columns:
            if kind not in KINDS:
                raise PreprocessError(f"column {name!r}: unknown kind {kind!r}")
        names = [n for n, _ in self.columns]
        if len(set(names)) != len(names):
            raise PreprocessError("duplicate column names in schema")
        n_label = sum(kind == "label" for _, kind in self.columns)
        if n_label != 1:
            raise PreprocessError(f"schema needs exactly one label column, found {n_label}")
        if len(self.delimiter) != 1:
            raise PreprocessError(f"delimiter must be a single character, got {self.delimiter!r}")

    @property
    def feature_columns(self) -> list[tuple[int, str, str]]:
        """``(position, name, kind)`` for every continuous/categorical column, in order."""
        return [(i, n, k) for i, (n, k) in enumerate(self.columns)
                if k in ("continuous", "categorical")]

    @property
    def label_index(self) -> int:
        return next(i for i, (_, k) in enumerate(self.columns) if k == "label")


def parse_schema(text: str) -> RecordSchema:
    """Parse the ``key = value`` schema format.

    Recognised keys: ``delimiter`` (a name such as ``tab`` or one literal
    character), ``label_positive`` (comma-separated raw label values meaning
    intrusion) and ``column`` (``<name> <kind>``; repeat once per column, in
    file order). ``#`` starts a comment line.
    """
    columns = []
    delimiter = "\t"
    positive: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise PreprocessError(f"schema line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "delimiter":
            delimiter = _DELIMS.get(value, value)
        elif key == "label_positive":
            positive.update(v.strip() for v in value.split(",") if v.strip())
        elif key == "column":
            parts = value.split()
            if len(parts) != 2:
                raise PreprocessError(f"schema line {lineno}: expected 'column = <name> <kind>'")
            columns.append((parts[0], parts[1]))
        else:
            raise PreprocessError(f"schema line {lineno}: unknown key {key!r}")
    if not columns:
        raise PreprocessError("schema declares no columns")
    return RecordSchema(columns, delimiter, frozenset(positive))


def load_schema(path) -> RecordSchema:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise PreprocessError(f"cannot read schema {path}: {e.strerror}") from e
    return parse_schema(text)


def read_records(path, schema: RecordSchema):
    """Read delimited rows. Rows with the wrong field count are dropped.

    Returns ``(rows, line_numbers, n_rejected)``.
    """
    rows, linenos = [], []
    rejected = 0
    ncol = len(schema.columns)
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        for fields in reader:
            if not fields or (len(fields) == 1 and not fields[0].strip()):
                continue
            if len(fields) != ncol:
                rejected += 1
                continue
            rows.append([f.strip() for f in fields])
            linenos.append(reader.line_num)
    return rows, linenos, rejected


@dataclass
class ColumnStats:
    name: str
    kind: str
    mean: float = 0.0
    std: float = 0.0
    quantile_edges: np.ndarray | None = None
    category_map: dict[str, int] = field(default_factory=dict)

    @property
    def degenerate(self) -> bool:
        return self.kind == "continuous" and self.std == 0.0

    @property
    def width(self) -> int:
        return N_BINS if self.kind == "continuous" else len(self.category_map)

    def to_json(self) -> dict:
        if self.kind == "continuous":
            return {"name": self.name, "kind": self.kind, "mean": self.mean, "std": self.std,
                    "quantile_edges": [float(e) for e in self.quantile_edges]}
        cats = sorted(self.category_map, key=self.category_map.__getitem__)
        return {"name": self.name, "kind": self.kind, "categories": cats}

    @classmethod
    def from_json(cls, d: dict) -> "ColumnStats":
        if d["kind"] == "continuous":
            edges = np.array(d["quantile_edges"], dtype=np.float64)
            if edges.shape != (N_BINS + 1,) or np.any(np.diff(edges) < 0):
                raise PreprocessError(f"column {d['name']!r}: bad quantile edges")
            return cls(d["name"], "continuous", float(d["mean"]), float(d["std"]), edges)
        if d["kind"] == "categorical":
            return cls(d["name"], "categorical",
                       category_map={c: i for i, c in enumerate(d["categories"])})
        raise PreprocessError(f"column {d.get('name')!r}: unknown kind {d['kind']!r}")


def decile_edges(sorted_values: np.ndarray) -> np.ndarray:
    """0th..100th percentiles of an ascending sample, linear interpolation.

    Positions ``k * (n - 1) / 10`` are split into integer and fractional parts
    with integer arithmetic, so edges that land on a sample are that sample.
    """
    v = np.asarray(sorted_values, dtype=np.float64)
    n = v.shape[0]
    edges = np.empty(N_BINS + 1)
    for k in range(N_BINS + 1):
        lo, rem = divmod(k * (n - 1), N_BINS)
        if rem == 0:
            edges[k] = v[lo]
        else:
            edges[k] = v[lo] + (rem / N_BINS) * (v[lo + 1] - v[lo])
    # interpolation between equal neighbours can wobble by an ulp
    return np.maximum.accumulate(edges)


def _parse_float(raw: str, lineno: int, name: str) -> float:
    try:
        x = float(raw)
    except ValueError:
        raise PreprocessError(f"row {lineno}, column {name!r}: {raw!r} is not a number") from None
    if not math.isfinite(x):
        raise PreprocessError(f"row {lineno}, column {name!r}: non-finite value {raw!r}")
    return x


def _column_floats(rows, pos, name, linenos) -> np.ndarray:
    out = np.empty(len(rows))
    for i, row in enumerate(rows):
        out[i] = _parse_float(row[pos], linenos[i] if linenos else i + 1, name)
    return out


def fit_stats(rows, schema: RecordSchema, linenos=None) -> dict[str, ColumnStats]:
    """Fit per-column statistics for every used feature column."""
    if not rows:
        raise PreprocessError("cannot fit statistics on empty input")
    if len(rows) < N_BINS:
        raise PreprocessError(f"need at least {N_BINS} rows to fit deciles, got {len(rows)}")
    stats = {}
    for pos, name, kind in schema.feature_columns:
        if kind == "continuous":
            x = _column_floats(rows, pos, name, linenos)
            mean = float(np.mean(x))
            std = float(np.std(x))
            st = ColumnStats(name, kind, mean, std)
            st.quantile_edges = decile_edges(np.sort(standardize(x, st)))
        else:
            cats = sorted({row[pos] for row in rows})
            st = ColumnStats(name, kind, category_map={c: i for i, c in enumerate(cats)})
        stats[name] = st
    return stats


def standardize(x, stats: ColumnStats):
    """``(x - mean) / std``; a zero-variance column standardizes to 0."""
    if stats.kind != "continuous":
        raise PreprocessError(f"column {stats.name!r} is not continuous")
    if stats.std == 0.0:
        return np.zeros_like(x, dtype=np.float64) if np.ndim(x) else 0.0
    return (x - stats.mean) / stats.std


def decile_bin(z, stats: ColumnStats):
    """Index in ``[0, 9]`` of the half-open decile interval holding ``z``.

    Values below the lowest edge go to bin 0, values at or above the top edge
    to bin 9. Collapsed (repeated) edges leave empty bins behind.
    """
    if stats.quantile_edges is None:
        raise PreprocessError(f"column {stats.name!r} has no fitted quantile edges")
    b = np.searchsorted(stats.quantile_edges[1:N_BINS], z, side="right")
    return int(b) if np.ndim(b) == 0 else b


def index_category(raw: str, stats: ColumnStats) -> int:
    try:
        return stats.category_map[raw]
    except KeyError:
        raise PreprocessError(f"column {stats.name!r}: category {raw!r} unseen at fit time") from None


def one_hot(index: int, width: int) -> np.ndarray:
    if not 0 <= index < width:
        raise ValueError(f"one-hot index {index} out of range for width {width}")
    v = np.zeros(width)
    v[index] = 1.0
    return v


@dataclass(frozen=True)
class EncodedSample:
    indices: tuple[int, ...]
    widths: tuple[int, ...]
    label: int

    @property
    def groups(self) -> list[np.ndarray]:
        return [one_hot(i, w) for i, w in zip(self.indices, self.widths)]


def dedupe(samples):
    """Keep the first occurrence of each distinct (groups, label); order preserved."""
    seen = set()
    out = []
    for s in samples:
        key = (s.indices, s.widths, s.label)
        if key not in seen:
            seen.add(key)
            out.append(s)
    return out


def dedupe_arrays(indices: np.ndarray, labels: np.ndarray):
    """Vectorised ``dedupe`` on compact arrays. Returns the kept row positions."""
    if len(labels) == 0:
        return np.arange(0)
    table = np.ascontiguousarray(np.column_stack([indices, labels]).astype(np.int64))
    _, first = np.unique(table, axis=0, return_index=True)
    return np.sort(first)


@dataclass
class EncodedDataset:
    indices: np.ndarray          # (N, T) int
    labels: np.ndarray           # (N,) int in {0, 1}
    widths: tuple[int, ...]
    names: tuple[str, ...]
    stats_digest: str = ""

    def __len__(self):
        return self.labels.shape[0]

    @property
    def input_width(self) -> int:
        return max(self.widths)

    def samples(self):
        return [EncodedSample(tuple(int(i) for i in row), self.widths, int(y))
                for row, y in zip(self.indices, self.labels)]

    def subset(self, idx) -> "EncodedDataset":
        return EncodedDataset(self.indices[idx], self.labels[idx], self.widths, self.names,
                              self.stats_digest)

    def to_text(self) -> str:
        lines = [DATASET_MAGIC,
                 f"stats {self.stats_digest or '-'}",
                 "names " + " ".join(self.names),
                 "widths " + " ".join(str(w) for w in self.widths)]
        for row, y in zip(self.indices.tolist(), self.labels.tolist()):
            lines.append(" ".join(map(str, row)) + f" {y}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, source="<text>") -> "EncodedDataset":
        lines = text.splitlines()
        if len(lines) < 4 or lines[0] != DATASET_MAGIC:
            raise PreprocessError(f"{source}: not an encoded dataset file")
        digest = lines[1].split(" ", 1)[1] if lines[1].startswith("stats ") else None
        if digest is None or not lines[2].startswith("names ") or not lines[3].startswith("widths "):
            raise PreprocessError(f"{source}: malformed dataset header")
        names = tuple(lines[2].split()[1:])
        widths = tuple(int(w) for w in lines[3].split()[1:])
        if len(names) != len(widths) or not widths:
            raise PreprocessError(f"{source}: names/widths disagree")
        body = lines[4:]
        T = len(widths)
        try:
            table = np.array([[int(v) for v in ln.split()] for ln in body], dtype=np.int64)
        except ValueError as e:
            raise PreprocessError(f"{source}: {e}") from None
        table = table.reshape(len(body), -1) if body else np.zeros((0, T + 1), dtype=np.int64)
        if table.shape[1] != T + 1:
            raise PreprocessError(f"{source}: rows must hold {T} group indices plus a label")
        idx, labels = table[:, :T], table[:, T]
        if np.any(idx < 0) or np.any(idx >= np.array(widths)) or np.any((labels != 0) & (labels != 1)):
            raise PreprocessError(f"{source}: index or label out of range")
        return cls(idx, labels, widths, names, "" if digest == "-" else digest)


def load_dataset(path) -> EncodedDataset:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise PreprocessError(f"cannot read dataset {path}: {e.strerror}") from e
    return EncodedDataset.from_text(text, source=str(path))


def stats_to_text(stats: dict[str, ColumnStats]) -> str:
    doc = {"format": STATS_FORMAT, "columns": [s.to_json() for s in stats.values()]}
    return json.dumps(doc, indent=1) + "\n"


def stats_from_text(text: str) -> dict[str, ColumnStats]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise PreprocessError(f"stats file is not valid JSON: {e}") from None
    if doc.get("format") != STATS_FORMAT:
        raise PreprocessError(f"unsupported stats format {doc.get('format')!r}")
    return {d["name"]: ColumnStats.from_json(d) for d in doc["columns"]}


def digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def encode_rows(rows, schema: RecordSchema, stats: dict[str, ColumnStats], linenos=None):
    """Compact encoding: ``(indices (N, T), labels (N,))``."""
    feats = schema.feature_columns
    missing = [n for _, n, _ in feats if n not in stats]
    if missing:
        raise PreprocessError(f"stats lack columns {missing}")
    N = len(rows)
    indices = np.empty((N, len(feats)), dtype=np.int64)
    for t, (pos, name, kind) in enumerate(feats):
        st = stats[name]
        if st.kind != kind:
            raise PreprocessError(f"column {name!r}: schema kind {kind} vs stats kind {st.kind}")
        if kind == "continuous":
            x = _column_floats(rows, pos, name, linenos)
            indices[:, t] = decile_bin(standardize(x, st), st)
        else:
            indices[:, t] = [index_category(row[pos], st) for row in rows]
    li = schema.label_index
    labels = np.array([row[li] in schema.label_positive_values for row in rows], dtype=np.int64)
    return indices, labels


def atomic_write_text(path, text: str):
    """Write via a temp file and rename, so a failure leaves no partial file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class PipelineReport:
    rows_read: int
    rows_rejected: int
    encoded: int
    written: int
    test_written: int = 0


def run_pipeline(input_path, schema_path, output_path, stats_out=None, stats_in=None,
                 test_output=None, test_fraction: float = 0.2) -> PipelineReport:
    """Fit (or load) statistics, encode, deduplicate and write the dataset.

    With ``stats_in`` the stored statistics are reused instead of refitting,
    which re-encodes a corpus identically. With ``test_output`` the rows are
    split in file order: the trailing ``test_fraction`` goes to the test file.
    Both halves share the single fit, and each is deduplicated on its own.
    """
    schema = load_schema(schema_path)
    try:
        rows, linenos, rejected = read_records(input_path, schema)
    except OSError as e:
        raise PreprocessError(f"cannot read input {input_path}: {e.strerror}") from e
    if not rows:
        raise PreprocessError(f"{input_path}: no valid records ({rejected} rejected)")
    if stats_in is not None:
        stats_text = Path(stats_in).read_text()
        stats = stats_from_text(stats_text)
    else:
        stats = fit_stats(rows, schema, linenos)
        stats_text = stats_to_text(stats)
    dig = digest(stats_text)
    indices, labels = encode_rows(rows, schema, stats, linenos)
    feats = schema.feature_columns
    widths = tuple(stats[n].width for _, n, _ in feats)
    names = tuple(n for _, n, _ in feats)

    parts = [(output_path, slice(0, len(rows)))]
    if test_output is not None:
        if not 0.0 < test_fraction < 1.0:
            raise PreprocessError("test_fraction must lie in (0, 1)")
        cut = len(rows) - int(round(len(rows) * test_fraction))
        parts = [(output_path, slice(0, cut)), (test_output, slice(cut, len(rows)))]

    texts = []
    for _, sl in parts:
        idx, lab = indices[sl], labels[sl]
        keep = dedupe_arrays(idx, lab)
        texts.append(EncodedDataset(idx[keep], lab[keep], widths, names, dig).to_text())
    for (path, _), text in zip(parts, texts):
        atomic_write_text(path, text)
    if stats_out is not None:
        atomic_write_text(stats_out, stats_text)
    counts = [t.count("\n") - 4 for t in texts]
    return PipelineReport(len(rows) + rejected, rejected, len(rows), counts[0],
                          counts[1] if len(counts) > 1 else 0)
