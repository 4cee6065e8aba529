"""Time-space matrices from per-section speed records.

A day of network traffic becomes a [sections x intervals] speed grid,
treated as a one-channel image. Supervised samples are sliding windows
cut along the time axis, never crossing day boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .numerics import Tensor

MISSING = np.nan

# Prediction task presets in 2-minute time units:
# (input span minutes, output span minutes) of the four standard tasks.
TASK_PRESETS = {
    1: (15, 5),   # 30 min in, 10 min out
    2: (20, 5),   # 40 min in, 10 min out
    3: (15, 10),  # 30 min in, 20 min out
    4: (20, 10),  # 40 min in, 20 min out
}


@dataclass
class SectionSpeedSeries:
    section_id: int
    speeds: np.ndarray          # km/h, NaN marks missing intervals
    interval_minutes: float = 2.0

    def __post_init__(self):
        self.speeds = np.asarray(self.speeds, dtype=np.float64)


@dataclass
class TimeSpaceMatrix:
    grid: Tensor                 # [Q sections, N intervals], km/h
    section_order: list
    day_label: str = ""
    interval_minutes: float = 2.0

    @property
    def q(self) -> int:
        return self.grid.shape[0]

    @property
    def n(self) -> int:
        return self.grid.shape[1]

    @property
    def is_complete(self) -> bool:
        return not np.isnan(self.grid).any()


@dataclass
class TaskSpec:
    t_in: int
    t_out: int
    q: int

    def __post_init__(self):
        if self.t_in < 1 or self.t_out < 1 or self.q < 1:
            raise ValueError(f"invalid task spec: t_in={self.t_in} t_out={self.t_out} q={self.q}")

    @classmethod
    def preset(cls, task_id: int, q: int) -> "TaskSpec":
        if task_id not in TASK_PRESETS:
            raise ValueError(f"unknown task {task_id}; valid tasks are 1-4")
        t_in, t_out = TASK_PRESETS[task_id]
        return cls(t_in=t_in, t_out=t_out, q=q)


@dataclass
class Sample:
    input: Tensor                # [1, q, t_in], normalized
    target: Tensor               # [q * t_out], normalized, section-major
    origin: tuple = ("", 0)      # (day_label, start column)


@dataclass
class RejectedRecord:
    record: tuple
    reason: str


def aggregate(records, interval_minutes: float, day_start: datetime, day_end: datetime,
              section_ids=None):
    """Mean speed per (section, interval); empty intervals stay missing.

    records: iterable of (section_id, timestamp, speed_kmh) with datetime or
    ISO-8601 string timestamps. Returns (list of SectionSpeedSeries, list of
    RejectedRecord). Out-of-span or negative-speed records are rejected, not
    silently dropped.
    """
    if interval_minutes <= 0:
        raise ValueError("interval_minutes must be positive")
    span_min = (day_end - day_start).total_seconds() / 60.0
    n = int(round(span_min / interval_minutes))
    if n < 1 or abs(n * interval_minutes - span_min) > 1e-9:
        raise ValueError("day span must be a whole number of intervals")

    sums: dict = {}
    counts: dict = {}
    rejected = []
    seen_sections = set()
    for rec in records:
        sid, ts, speed = rec
        if isinstance(ts, str):
            ts = datetime.fromisoformat(ts)
        if speed < 0:
            rejected.append(RejectedRecord(rec, "negative speed"))
            continue
        if not (day_start <= ts < day_end):
            rejected.append(RejectedRecord(rec, "timestamp outside day span"))
            continue
        idx = int((ts - day_start).total_seconds() // (interval_minutes * 60.0))
        key = (sid, idx)
        sums[key] = sums.get(key, 0.0) + speed
        counts[key] = counts.get(key, 0) + 1
        seen_sections.add(sid)

    if section_ids is None:
        section_ids = sorted(seen_sections)
    out = []
    for sid in section_ids:
        speeds = np.full(n, MISSING)
        for j in range(n):
            c = counts.get((sid, j), 0)
            if c:
                speeds[j] = sums[(sid, j)] / c
        out.append(SectionSpeedSeries(sid, speeds, interval_minutes))
    return out, rejected


def impute(series_list):
    """Fill missing cells from spatiotemporal neighbors.

    Each missing cell becomes the mean of its available neighbors among
    {previous time, next time, previous section row, next section row},
    swept in row-major passes until no gap remains. Non-missing cells are
    never altered.
    """
    grid = np.stack([s.speeds for s in series_list])
    mask = np.isnan(grid)
    if mask.all():
        raise ValueError("dataset is entirely missing; nothing to propagate from")
    frac = mask.mean(axis=1)
    worst = frac.max()
    if worst > 0.5:
        raise ValueError(f"missing fraction {worst:.2f} exceeds the 50% imputation guard")

    rows, cols = grid.shape
    while np.isnan(grid).any():
        filled_any = False
        snapshot = grid.copy()
        for i in range(rows):
            for j in np.flatnonzero(np.isnan(snapshot[i])):
                vals = []
                if j > 0 and not np.isnan(snapshot[i, j - 1]):
                    vals.append(snapshot[i, j - 1])
                if j < cols - 1 and not np.isnan(snapshot[i, j + 1]):
                    vals.append(snapshot[i, j + 1])
                if i > 0 and not np.isnan(snapshot[i - 1, j]):
                    vals.append(snapshot[i - 1, j])
                if i < rows - 1 and not np.isnan(snapshot[i + 1, j]):
                    vals.append(snapshot[i + 1, j])
                if vals:
                    grid[i, j] = float(np.mean(vals))
                    filled_any = True
        if not filled_any:
            raise ValueError("imputation stalled: isolated missing region with no neighbors")

    out = []
    for i, s in enumerate(series_list):
        out.append(SectionSpeedSeries(s.section_id, grid[i].copy(), s.interval_minutes))
    return out


def build_matrix(series_list, section_order, day_label: str = "") -> TimeSpaceMatrix:
    """Stack complete series into a [Q, N] grid, rows in section_order."""
    by_id = {s.section_id: s for s in series_list}
    if len(by_id) != len(series_list):
        raise ValueError("duplicate section_id in series set")
    if sorted(section_order) != sorted(by_id):
        raise ValueError("section_order is not a permutation of the section ids")
    lengths = {len(s.speeds) for s in series_list}
    if len(lengths) != 1:
        raise ValueError("series lengths differ")
    for s in series_list:
        if np.isnan(s.speeds).any():
            raise ValueError(f"section {s.section_id} still has missing values; impute first")
    grid = np.stack([by_id[sid].speeds for sid in section_order]).astype(np.float64)
    return TimeSpaceMatrix(grid, list(section_order), day_label,
                           series_list[0].interval_minutes)


def default_vmax(matrices) -> float:
    """Observed dataset maximum rounded up to the next multiple of 10 km/h."""
    peak = max(float(np.nanmax(m.grid)) for m in matrices)
    return float(max(10.0, np.ceil(peak / 10.0) * 10.0))


def normalize(matrix: TimeSpaceMatrix, v_max: float) -> Tensor:
    """Scale the grid into [0, 1] by v_max."""
    if v_max <= 0:
        raise ValueError("v_max must be positive")
    observed = float(np.nanmax(matrix.grid))
    if v_max < observed:
        raise ValueError(f"v_max={v_max} below observed maximum {observed}; would clip")
    return matrix.grid / v_max


def denormalize(grid: Tensor, v_max: float) -> Tensor:
    return grid * v_max


def make_samples(grid: Tensor, task: TaskSpec, day_label: str = ""):
    """Cut all (input, target) windows from one normalized day grid.

    Yields exactly N - t_in - t_out + 1 samples. Inputs carry a leading
    channel axis; targets are flattened section-major.
    """
    q, n = grid.shape
    if q != task.q:
        raise ValueError(f"grid has {q} sections, task expects {task.q}")
    if n < task.t_in + task.t_out:
        raise ValueError(f"day length {n} shorter than t_in+t_out={task.t_in + task.t_out}")
    samples = []
    for i in range(n - task.t_in - task.t_out + 1):
        x = grid[:, i:i + task.t_in][np.newaxis, :, :].copy()
        y = grid[:, i + task.t_in:i + task.t_in + task.t_out].reshape(-1).copy()
        samples.append(Sample(x, y, (day_label, i)))
    return samples


# --- file formats -----------------------------------------------------------

RECORD_CSV_HEADER = "section_id,timestamp_iso8601,speed_kmh"


def write_records_csv(path, records):
    with open(path, "w") as f:
        f.write(RECORD_CSV_HEADER + "\n")
        for sid, ts, speed in records:
            if isinstance(ts, datetime):
                ts = ts.isoformat()
            f.write(f"{sid},{ts},{speed!r}\n")


def read_records_csv(path):
    records = []
    with open(path) as f:
        header = f.readline().strip()
        if header != RECORD_CSV_HEADER:
            raise ValueError(f"bad record CSV header in {path}")
        for line in f:
            line = line.strip()
            if not line:
                continue
            sid, ts, speed = line.split(",")
            records.append((int(sid), datetime.fromisoformat(ts), float(speed)))
    return records


def write_matrix_csv(path, matrix: TimeSpaceMatrix, v_max: float):
    with open(path, "w") as f:
        f.write(f"# sections={matrix.q} intervals={matrix.n} "
                f"interval_min={matrix.interval_minutes:g} vmax={v_max:g} "
                f"day={matrix.day_label}\n")
        for row in matrix.grid:
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def read_matrix_csv(path):
    """Returns (TimeSpaceMatrix, v_max)."""
    with open(path) as f:
        header = f.readline().strip()
        if not header.startswith("# "):
            raise ValueError(f"missing matrix CSV header in {path}")
        fields = dict(kv.split("=", 1) for kv in header[2:].split(" "))
        q = int(fields["sections"])
        n = int(fields["intervals"])
        rows = [np.array([float(v) for v in f.readline().split(",")]) for _ in range(q)]
    grid = np.stack(rows)
    if grid.shape != (q, n):
        raise ValueError(f"matrix CSV body shape {grid.shape} does not match header ({q},{n})")
    m = TimeSpaceMatrix(grid, list(range(q)), fields.get("day", ""),
                        float(fields.get("interval_min", 2)))
    return m, float(fields["vmax"])


def write_pgm(path, matrix: TimeSpaceMatrix, v_max: float):
    """8-bit grayscale heatmap: pixel = round(255 * speed / v_max)."""
    if v_max <= 0:
        raise ValueError("v_max must be positive")
    pixels = np.clip(np.round(255.0 * matrix.grid / v_max), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P5\n")
        f.write(f"# day={matrix.day_label}\n".encode())
        f.write(f"{matrix.n} {matrix.q}\n255\n".encode())
        f.write(pixels.tobytes())
