"""
Event CSV adapter for ppp_cpd

Format: header ``window,x1,...,xd`` and one row per point. Window ids are
integers; a row with a window id and blank coordinates marks an empty window,
and ids missing from a contiguous range are empty windows as well.
"""
import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
import pandas as pd
import structlog

from ..core.errors import DomainError, IngestError
from ..domain.models import PointWindow
from ..engines.embedding import RescaleStats, fit_rescale, rescale_events

logger = structlog.get_logger(__name__)

# data rows start on line 2, after the header
FIRST_DATA_LINE = 2


@dataclass
class IngestResult:
    """Training/stream split of an event file, re-indexed from 1"""
    training: List[PointWindow]
    stream: List[PointWindow]
    stats: RescaleStats
    window_ids: List[int]
    coordinate_columns: List[str]

    @property
    def n_train(self) -> int:
        return len(self.training)

    @property
    def last_window_id(self) -> int:
        return self.window_ids[-1]


def _resolve_columns(columns: Sequence[str], window_column: str,
                     coordinate_columns: Optional[Sequence[str]]) -> List[str]:
    if window_column not in columns:
        raise IngestError(f"missing window column {window_column!r}", line_number=1)
    if coordinate_columns is None:
        coordinate_columns = [c for c in columns if c != window_column]
    missing = [c for c in coordinate_columns if c not in columns]
    if missing:
        raise IngestError(f"missing coordinate columns {missing}", line_number=1)
    if not coordinate_columns:
        raise IngestError("no coordinate columns", line_number=1)
    return list(coordinate_columns)


def _parse_frame(frame: pd.DataFrame, window_column: str,
                 coordinate_columns: List[str]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Validated (window ids, coordinates, is_point) arrays in file order"""
    raw_ids = frame[window_column]
    ids = pd.to_numeric(raw_ids, errors="coerce")
    for row, (raw, value) in enumerate(zip(raw_ids, ids)):
        if pd.isna(value) or not float(value).is_integer():
            raise IngestError(f"window id {raw!r} is not an integer", line_number=row + FIRST_DATA_LINE)

    raw_coords = frame[coordinate_columns]
    coords = raw_coords.apply(pd.to_numeric, errors="coerce")
    blank = raw_coords.isna()
    unparsable = coords.isna() & ~blank
    bad_rows = np.flatnonzero(unparsable.any(axis=1).to_numpy())
    if bad_rows.size:
        row = int(bad_rows[0])
        raise IngestError(f"non-numeric coordinate in row {raw_coords.iloc[row].tolist()}",
                          line_number=row + FIRST_DATA_LINE)
    all_blank = blank.all(axis=1).to_numpy()
    partial = blank.any(axis=1).to_numpy() & ~all_blank
    if partial.any():
        row = int(np.flatnonzero(partial)[0])
        raise IngestError("row has some but not all coordinates", line_number=row + FIRST_DATA_LINE)
    values = coords.to_numpy(dtype=float)
    if not np.all(np.isfinite(values[~all_blank])):
        row = int(np.flatnonzero(~np.isfinite(values).all(axis=1) & ~all_blank)[0])
        raise IngestError("non-finite coordinate", line_number=row + FIRST_DATA_LINE)
    return ids.to_numpy(dtype=np.int64), values, ~all_blank


def ingest_events(path: Union[str, Path], window_column: str = "window",
                  coordinate_columns: Optional[Sequence[str]] = None,
                  training_fraction: float = 0.5,
                  bounds: Optional[Sequence[Tuple[float, float]]] = None) -> IngestResult:
    """Read an event file and split it into training and stream windows.

    The first floor(training_fraction * n) windows of the contiguous id range
    form the training segment. Coordinates are rescaled with ``bounds`` when
    given, otherwise with the training min/max per coordinate.
    """
    path = Path(path)
    if not path.exists():
        raise IngestError(f"event file not found: {path}")
    if not 0 < training_fraction < 1:
        raise IngestError(f"training_fraction must lie in (0, 1), got {training_fraction}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[""],
                            skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise IngestError(f"event file {path} is empty", line_number=1)
    except pd.errors.ParserError as e:
        raise IngestError(f"cannot parse {path}: {e}")

    frame.columns = [str(c).strip() for c in frame.columns]
    columns = _resolve_columns(list(frame.columns), window_column, coordinate_columns)
    if frame.empty:
        raise IngestError(f"event file {path} has no rows", line_number=FIRST_DATA_LINE)
    ids, values, is_point = _parse_frame(frame, window_column, columns)

    if np.any(np.diff(ids) < 0):
        logger.warning("Window ids are not monotone; sorting", path=str(path))
        order = np.argsort(ids, kind="stable")
        ids, values, is_point = ids[order], values[order], is_point[order]

    first_id, last_id = int(ids[0]), int(ids[-1])
    n_windows = last_id - first_id + 1
    n_train = math.floor(training_fraction * n_windows)
    if n_train < 1:
        raise IngestError(
            f"empty training segment: {n_windows} windows at training_fraction {training_fraction}"
        )

    train_rows = is_point & (ids < first_id + n_train)
    if bounds is not None:
        if len(bounds) != len(columns):
            raise IngestError(f"bounds give {len(bounds)} ranges for {len(columns)} coordinates")
        try:
            stats = RescaleStats(mins=tuple(float(b[0]) for b in bounds),
                                 maxs=tuple(float(b[1]) for b in bounds))
        except DomainError as e:
            raise IngestError(f"invalid bounds: {e}")
    else:
        if not train_rows.any():
            raise IngestError("training segment has no points to fit the rescale range")
        try:
            stats = fit_rescale(values[train_rows])
        except DomainError as e:
            raise IngestError(f"cannot rescale: {e}")

    scaled = np.empty_like(values)
    scaled[is_point] = rescale_events(values[is_point], stats)
    windows = _group_windows(ids[is_point] - first_id + 1, scaled[is_point], n_windows, len(columns))

    logger.info("Ingested event file", path=str(path), windows=n_windows, n_train=n_train,
                points=int(is_point.sum()), first_window_id=first_id)
    return IngestResult(
        training=windows[:n_train],
        stream=windows[n_train:],
        stats=stats,
        window_ids=list(range(first_id, last_id + 1)),
        coordinate_columns=columns,
    )


def _group_windows(indices: np.ndarray, points: np.ndarray, n_windows: int, dim: int) -> List[PointWindow]:
    """Windows 1..n_windows from sorted 1-based indices and their points"""
    bounds = np.searchsorted(indices, np.arange(1, n_windows + 2))
    return [
        PointWindow(index=i, points=points[bounds[i - 1]: bounds[i]].reshape(-1, dim))
        for i in range(1, n_windows + 1)
    ]


def dump_events(windows: Iterable[PointWindow], path: Union[str, Path],
                window_column: str = "window") -> Path:
    """Write windows to an event file; empty windows get one blank-coordinate row"""
    windows = list(windows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dim = next((w.dim for w in windows if w.size), windows[0].dim if windows else 1)
    columns = [window_column] + [f"x{j + 1}" for j in range(dim)]

    blocks = []
    for w in windows:
        if w.size:
            block = pd.DataFrame(w.points, columns=columns[1:])
        else:
            block = pd.DataFrame([[np.nan] * dim], columns=columns[1:])
        block.insert(0, window_column, w.index)
        blocks.append(block)
    frame = pd.concat(blocks, ignore_index=True) if blocks else pd.DataFrame(columns=columns)
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.info("Wrote event file", path=str(path), windows=len(windows), rows=len(frame))
    return path


class EventStreamReader:
    """Incremental reader of event rows for live detection.

    A window is complete when a row with a larger id arrives or the input
    ends. Ids skipped in between yield empty windows. Windows are numbered
    from ``next_index``; ``last_id`` is the id preceding the first expected
    window (None accepts any starting id).
    """

    def __init__(self, source: TextIO, stats: RescaleStats, next_index: int,
                 last_id: Optional[int] = None, window_column: str = "window",
                 coordinate_columns: Optional[Sequence[str]] = None):
        self.source = source
        self.stats = stats
        self.next_index = next_index
        self.last_id = last_id
        self.window_column = window_column
        self.coordinate_columns = coordinate_columns
        self.logger = structlog.get_logger(__name__)

    def _window(self, rows: List[List[float]]) -> PointWindow:
        raw = np.asarray(rows, dtype=float).reshape(-1, self.stats.dim)
        points = rescale_events(raw, self.stats) if len(raw) else raw
        window = PointWindow(index=self.next_index, points=points)
        self.next_index += 1
        return window

    def _flush(self, rows: List[List[float]], window_id: int) -> Iterator[Tuple[int, PointWindow]]:
        if self.last_id is not None:
            for skipped in range(self.last_id + 1, window_id):
                yield skipped, self._window([])
        yield window_id, self._window(rows)
        self.last_id = window_id

    def __iter__(self) -> Iterator[Tuple[int, PointWindow]]:
        """Yield (original window id, window) pairs in order"""
        reader = csv.reader(self.source)
        header = next(reader, None)
        if header is None:
            return
        header = [h.strip() for h in header]
        columns = _resolve_columns(header, self.window_column, self.coordinate_columns)
        if len(columns) != self.stats.dim:
            raise IngestError(f"expected {self.stats.dim} coordinate columns, got {len(columns)}",
                              line_number=1)
        id_pos = header.index(self.window_column)
        coord_pos = [header.index(c) for c in columns]

        current_id: Optional[int] = None
        rows: List[List[float]] = []
        for line_number, record in enumerate(reader, start=FIRST_DATA_LINE):
            if not record or all(not field.strip() for field in record):
                continue
            if len(record) != len(header):
                raise IngestError(f"expected {len(header)} fields, got {len(record)}", line_number)
            try:
                window_id = int(record[id_pos])
            except ValueError:
                raise IngestError(f"window id {record[id_pos]!r} is not an integer", line_number)
            fields = [record[p].strip() for p in coord_pos]
            if any(fields) and not all(fields):
                raise IngestError("row has some but not all coordinates", line_number)

            if current_id is not None and window_id < current_id:
                raise IngestError(f"window id {window_id} arrived after {current_id}", line_number)
            if self.last_id is not None and window_id <= self.last_id:
                raise IngestError(f"window id {window_id} is not after {self.last_id}", line_number)
            if current_id is not None and window_id > current_id:
                yield from self._flush(rows, current_id)
                rows = []
            current_id = window_id

            if all(fields):
                try:
                    rows.append([float(v) for v in fields])
                except ValueError:
                    raise IngestError(f"non-numeric coordinate in {fields}", line_number)

        if current_id is not None:
            yield from self._flush(rows, current_id)
