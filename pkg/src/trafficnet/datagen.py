"""Seedable synthetic network-speed generator.

Produces day-long speed grids with free flow, a daily demand cycle,
congestion clusters pinned at bottlenecks, and oscillating stop-and-go
tails drifting upstream, plus GPS-like record emission and missing-data
injection. This is a kinematic caricature, not a traffic simulator: the
point is spatial structure a convolutional model can exploit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np

from .numerics import Rng
from .traffic_image import MISSING, TimeSpaceMatrix

OSC_PERIOD_INTERVALS = 30   # stop-and-go wave period (one hour at 2-min steps)
TAIL_SECTIONS = 8           # e-folding length of the upstream congestion tail


@dataclass
class SyntheticNetworkConfig:
    q: int = 32
    days: int = 10
    interval_minutes: float = 2.0
    v_free: float = 60.0
    ring: bool = True
    bottlenecks: list = field(default_factory=lambda: [(8, 0.7), (24, 0.5)])
    wave_speed: float = 1.0          # sections per interval, upstream drift
    peak_hours: list = field(default_factory=lambda: [(7.0, 10.0, 1.3), (17.0, 20.0, 1.4)])
    noise_sd: float = 6.0
    missing_rate: float = 0.029
    seed: int = 42

    def __post_init__(self):
        if self.q < 1 or self.days < 1 or self.interval_minutes <= 0 or self.v_free <= 0:
            raise ValueError("invalid synthetic config")
        if not 0 <= self.missing_rate <= 0.029 + 1e-12:
            raise ValueError("missing_rate must be in [0, 0.029]")
        for idx, strength in self.bottlenecks:
            if not 0 <= idx < self.q:
                raise ValueError(f"bottleneck index {idx} out of range")
            if not 0 <= strength <= 1:
                raise ValueError(f"bottleneck strength {strength} outside [0, 1]")

    @property
    def intervals_per_day(self) -> int:
        return int(round(24 * 60 / self.interval_minutes))


def _demand_factor(cfg: SyntheticNetworkConfig) -> np.ndarray:
    """Per-interval base-speed multiplier from the demand cycle."""
    n = cfg.intervals_per_day
    hours = (np.arange(n) + 0.5) * cfg.interval_minutes / 60.0
    factor = np.ones(n)
    for start, end, mult in cfg.peak_hours:
        mid = 0.5 * (start + end)
        half = max(0.5 * (end - start), 1e-9)
        w = np.clip(1.0 - np.abs(hours - mid) / half, 0.0, 1.0)
        factor = np.minimum(factor, 1.0 / (1.0 + (mult - 1.0) * w))
    return factor


RAMP_HOURS = 0.5  # congestion onset/clearing ramp at the bottleneck


def _trapezoid(hours: np.ndarray, start: float, end: float) -> np.ndarray:
    """0..1 profile: RAMP_HOURS linear ramps around a full-strength plateau."""
    up = np.clip((hours - start) / RAMP_HOURS, 0.0, 1.0)
    down = np.clip((end - hours) / RAMP_HOURS, 0.0, 1.0)
    return np.minimum(up, down)


def _day_reduction(cfg: SyntheticNetworkConfig, rng: Rng) -> np.ndarray:
    """[q, n] fractional speed reduction for one day.

    Each bottleneck gets a seeded per-day congestion window (onset and
    duration vary day to day); the cluster is pinned at the bottleneck and
    its front expands upstream at wave_speed sections per interval, with a
    stop-and-go oscillation riding along the tail. Day-to-day timing jitter
    is what makes the upstream rows unpredictable from their own history
    alone: the only advance warning lives in the downstream rows.
    """
    n = cfg.intervals_per_day
    hours = (np.arange(n) + 0.5) * cfg.interval_minutes / 60.0
    intervals_per_hour = 60.0 / cfg.interval_minutes
    red = np.zeros((cfg.q, n))
    for b, strength in cfg.bottlenecks:
        onset = 6.0 + 9.0 * float(rng.random())
        duration = 2.0 + 4.0 * float(rng.random())
        d = (b - np.arange(cfg.q)) % cfg.q if cfg.ring else (b - np.arange(cfg.q)).astype(float)
        d = np.where(d >= 0, d, np.inf)   # only upstream sections congest
        # the front reaches distance d after d / wave_speed intervals
        lag_hours = d / max(cfg.wave_speed, 1e-9) / intervals_per_hour
        shifted = hours[None, :] - lag_hours[:, None]
        envelope = _trapezoid(shifted, onset, onset + duration)
        envelope *= np.exp(-d / TAIL_SECTIONS)[:, None]
        phase = 2 * np.pi * (np.arange(n)[None, :]
                             - d[:, None] / max(cfg.wave_speed, 1e-9)) / OSC_PERIOD_INTERVALS
        osc = 0.5 * (1.0 + np.cos(phase))
        local = strength * envelope
        # pinned at the bottleneck itself; oscillating along the tail
        local = np.where(d[:, None] == 0, local, local * osc)
        red = np.maximum(red, local)
    return np.clip(red, 0.0, 1.0)


def generate(cfg: SyntheticNetworkConfig):
    """One TimeSpaceMatrix per day, noise added and missing cells injected.

    Deterministic given the seed; each day uses a derived substream so
    parallel and serial generation agree.
    """
    n = cfg.intervals_per_day
    base = cfg.v_free * _demand_factor(cfg)
    matrices = []
    root = Rng(cfg.seed)
    for day in range(cfg.days):
        rng = root.spawn(day)
        red = _day_reduction(cfg, rng)
        grid = base[None, :] * (1.0 - red)
        if cfg.noise_sd > 0:
            grid = grid + rng.normal(0.0, cfg.noise_sd, grid.shape)
        grid = np.clip(grid, 0.0, 1.2 * cfg.v_free)
        if cfg.missing_rate > 0:
            mask = rng.random(grid.shape) < cfg.missing_rate
            grid[mask] = MISSING
        matrices.append(TimeSpaceMatrix(grid, list(range(cfg.q)),
                                        f"day{day:03d}", cfg.interval_minutes))
    return matrices


def day_span(day_index: int):
    """Fixed synthetic calendar: day 0 is 2015-05-01 UTC."""
    start = datetime(2015, 5, 1, tzinfo=timezone.utc) + timedelta(days=day_index)
    return start, start + timedelta(days=1)


def emit_gps(matrix: TimeSpaceMatrix, records_per_cell: int, jitter_sd: float,
             rng: Rng, day_index: int = 0, skip_missing: bool = False):
    """Per-cell GPS-like records: speed = cell + Gaussian jitter, timestamps
    uniform within the interval. With skip_missing, missing cells emit no
    records (and so stay missing after aggregation); otherwise they are an
    error."""
    if not skip_missing and not matrix.is_complete:
        raise ValueError("matrix has missing cells; impute before emitting records")
    start, _ = day_span(day_index)
    step = timedelta(minutes=matrix.interval_minutes)
    records = []
    for i in range(matrix.q):
        sid = matrix.section_order[i]
        for j in range(matrix.n):
            if np.isnan(matrix.grid[i, j]):
                continue
            for _ in range(records_per_cell):
                speed = float(matrix.grid[i, j])
                if jitter_sd > 0:
                    speed += float(rng.normal(0.0, jitter_sd, ()))
                speed = max(0.0, speed)
                ts = start + j * step + rng.random() * step
                records.append((sid, ts, speed))
    return records


# --- flat key=value config files ----------------------------------------------

def config_to_text(cfg: SyntheticNetworkConfig) -> str:
    lines = [
        f"q={cfg.q}",
        f"days={cfg.days}",
        f"interval_minutes={cfg.interval_minutes:g}",
        f"v_free={cfg.v_free:g}",
        f"ring={'true' if cfg.ring else 'false'}",
        "bottlenecks=" + ";".join(f"{i}:{s:g}" for i, s in cfg.bottlenecks),
        f"wave_speed={cfg.wave_speed:g}",
        "peak_hours=" + ";".join(f"{a:g}-{b:g}:{m:g}" for a, b, m in cfg.peak_hours),
        f"noise_sd={cfg.noise_sd:g}",
        f"missing_rate={cfg.missing_rate:g}",
        f"seed={cfg.seed}",
    ]
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> SyntheticNetworkConfig:
    kv = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        kv[key.strip()] = value.strip()
    kwargs = {}
    if "q" in kv:
        kwargs["q"] = int(kv["q"])
    if "days" in kv:
        kwargs["days"] = int(kv["days"])
    for key in ("interval_minutes", "v_free", "wave_speed", "noise_sd", "missing_rate"):
        if key in kv:
            kwargs[key] = float(kv[key])
    if "ring" in kv:
        kwargs["ring"] = kv["ring"].lower() in ("true", "1", "yes")
    if "seed" in kv:
        kwargs["seed"] = int(kv["seed"])
    if "bottlenecks" in kv:
        items = [p for p in kv["bottlenecks"].split(";") if p]
        kwargs["bottlenecks"] = [(int(p.split(":")[0]), float(p.split(":")[1])) for p in items]
    if "peak_hours" in kv:
        items = [p for p in kv["peak_hours"].split(";") if p]
        parsed = []
        for p in items:
            span, _, mult = p.partition(":")
            a, _, b = span.partition("-")
            parsed.append((float(a), float(b), float(mult)))
        kwargs["peak_hours"] = parsed
    return SyntheticNetworkConfig(**kwargs)
