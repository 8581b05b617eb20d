"""Sweeps over initial positions and trajectory post-processing.

Every sweep cell is a pure function of the config and its initial position,
so results do not depend on the worker count or scheduling order: cells are
farmed out to a process pool and collected back in grid order.
"""
from __future__ import annotations

import logging
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .config import SimulationConfig
from .dynamics import TrajectoryRecord, run_trajectory

log = logging.getLogger(__name__)

NO_EXIT = "no-exit"
DEGENERATE = "degenerate"
FAILED = "failed"


# -- parallel map ---------------------------------------------------------------

def _pool_context():
    methods = multiprocessing.get_all_start_methods()
    return multiprocessing.get_context("fork" if "fork" in methods else "spawn")


def parallel_map(func, items, jobs: int = 1) -> list:
    """Ordered ``map`` over a process pool; ``jobs <= 1`` runs in-process."""
    items = list(items)
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [func(it) for it in items]
    workers = min(jobs, len(items))
    chunk = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers, mp_context=_pool_context()) as ex:
        return list(ex.map(func, items, chunksize=chunk))


# -- exit detection ---------------------------------------------------------------

@dataclass(frozen=True)
class ExitDetection:
    """Exit time from the steepest population drop plus the geometric cross-check.

    ``geometric_time`` is ``None`` when the impurity never leaves the plaquette.
    ``tag`` is ``"population"`` or ``"degenerate"`` (steepest slope at the start).
    """

    time: float
    geometric_time: float | None
    tag: str


def smoothed_slope(t, values, window: int = 11):
    """Centered moving average over ``window`` samples, then ``d/dt``.

    Only fully covered samples are kept, so the returned times are
    ``t[h : len(t) - h]`` with ``h = window // 2``.  The window shrinks to the
    largest odd width that fits short records.
    """
    t = np.asarray(t, float)
    v = np.asarray(values, float)
    w = min(window, len(t) - 1)
    w = max(1, w if w % 2 else w - 1)
    h = w // 2
    smooth = np.convolve(v, np.ones(w) / w, mode="valid")
    ts = t[h : len(t) - h]
    return ts, np.gradient(smooth, ts)


def geometric_exit_time(record: TrajectoryRecord, center=(0.0, 0.0), half_width=0.25):
    """Time of the first sample outside the square plaquette, or ``None``."""
    outside = np.any(np.abs(record.r - np.asarray(center)) > half_width, axis=1)
    if not outside.any():
        return None
    return float(record.t[np.argmax(outside)])


def detect_exit_time(record: TrajectoryRecord, center=(0.0, 0.0), half_width=0.25,
                     window: int = 11) -> ExitDetection:
    """Locate the most negative smoothed slope of the impurity population.

    Raises
    ------
    ValueError
        If the record holds fewer than 3 samples.
    """
    if len(record.t) < 3:
        raise ValueError(f"need at least 3 population samples, got {len(record.t)}")
    ts, slope = smoothed_slope(record.t, record.pop_impurity, window)
    k = int(np.argmin(slope))
    if k == 0:
        time, tag = float(record.t[0]), DEGENERATE
    else:
        time, tag = float(ts[k]), "population"
    return ExitDetection(time, geometric_exit_time(record, center, half_width), tag)


# -- winding -----------------------------------------------------------------------

@dataclass(frozen=True)
class Winding:
    """Accumulated signed angle in radians; ``skipped`` counts samples at the center."""

    angle: float
    skipped: int = 0

    def __float__(self) -> float:
        return self.angle


def _positions(record) -> np.ndarray:
    r = record.r if isinstance(record, TrajectoryRecord) else record
    return np.asarray(r, dtype=float)[:, :2]


def cumulative_angle(record, center=(0.0, 0.0)):
    """Unwrapped polar angle about ``center`` for each usable sample.

    Returns ``(indices, angles)``; samples within 1e-12 of the center are dropped.
    """
    rel = _positions(record) - np.asarray(center, float)
    keep = np.flatnonzero(np.hypot(rel[:, 0], rel[:, 1]) > 1e-12)
    phi = np.unwrap(np.arctan2(rel[keep, 1], rel[keep, 0]))
    return keep, phi - (phi[0] if len(phi) else 0.0)


def winding_angle(record, center=(0.0, 0.0)) -> Winding:
    """Signed angle swept by ``r(t) - center`` over the record."""
    r = _positions(record)
    if len(r) < 2:
        raise ValueError("winding needs at least 2 samples")
    keep, phi = cumulative_angle(r, center)
    skipped = len(r) - len(keep)
    if skipped:
        log.info("winding: skipped %d samples at the center", skipped)
    return Winding(float(phi[-1]) if len(phi) else 0.0, skipped)


def revolution_radii(record, center=(0.0, 0.0)) -> np.ndarray:
    """Mean distance from ``center`` over each completed revolution."""
    r = _positions(record)
    keep, phi = cumulative_angle(r, center)
    if len(phi) == 0:
        return np.zeros(0)
    turn = np.floor(np.abs(phi) / (2 * np.pi)).astype(int)
    dist = np.hypot(*(r[keep] - np.asarray(center, float)).T)
    return np.array([dist[turn == k].mean() for k in range(turn[-1])])


def truncate(record: TrajectoryRecord, t_end: float | None) -> TrajectoryRecord:
    """Samples with ``t <= t_end`` (the whole record for ``None``)."""
    if t_end is None:
        return record
    m = record.t <= t_end
    lat = record.lattice_r[m] if record.lattice_r is not None else None
    return replace(record, t=record.t[m], r=record.r[m], p=record.p[m],
                   pop_impurity=record.pop_impurity[m], pop_lattice=record.pop_lattice[m],
                   norm2=record.norm2[m], lattice_r=lat)


# -- sweeps ------------------------------------------------------------------------

def _start_config(cfg: SimulationConfig, x: float, y: float) -> SimulationConfig:
    return replace(cfg, initial_impurity_position=np.array([x, y, 0.0]),
                   initial_impurity_momentum=np.zeros(3))


def _plaquette(cfg: SimulationConfig):
    center, half = cfg.lattice.central_plaquette()
    return center, half


def window_axis(cfg: SimulationConfig, n: int, lo: float = 0.1, hi: float = 0.9) -> tuple:
    """``n`` evenly spaced starts from ``lo*a`` to ``hi*a`` across the central plaquette."""
    center, half = _plaquette(cfg)
    a = cfg.lattice.spacing
    frac = np.linspace(lo, hi, n) if n > 1 else np.array([0.5 * (lo + hi)])
    return center[0] - half + frac * a, center[1] - half + frac * a


def cell_axis(cfg: SimulationConfig, n: int) -> tuple:
    """Centers of an ``n x n`` partition of the central plaquette."""
    center, half = _plaquette(cfg)
    k = (np.arange(n) + 0.5) / n
    return center[0] - half + 2 * half * k, center[1] - half + 2 * half * k


@dataclass
class DensityHistogram:
    """Counts of sampled impurity positions, indexed ``[ix, iy]``."""

    counts: np.ndarray
    x_edges: np.ndarray
    y_edges: np.ndarray
    total_samples: int
    sample_dt: float
    n_trajectories: int = 0
    failures: list = field(default_factory=list)
    terminations: dict = field(default_factory=dict)


def density_window(cfg: SimulationConfig):
    """Lattice extent plus one lattice spacing on each side."""
    pos = cfg.lattice.rest_positions
    a = cfg.lattice.spacing
    lo = pos[:, :2].min(axis=0) - a if len(pos) else np.array([-a, -a])
    hi = pos[:, :2].max(axis=0) + a if len(pos) else np.array([a, a])
    return (lo[0], hi[0]), (lo[1], hi[1])


def histogram_positions(records, cfg: SimulationConfig, bins: int | None = None) -> DensityHistogram:
    """Accumulate the sampled positions of ``records`` into one histogram."""
    bins = cfg.density_bins if bins is None else bins
    (x0, x1), (y0, y1) = density_window(cfg)
    xe, ye = np.linspace(x0, x1, bins + 1), np.linspace(y0, y1, bins + 1)
    counts = np.zeros((bins, bins), dtype=np.int64)
    for rec in records:
        c, _, _ = np.histogram2d(rec.r[:, 0], rec.r[:, 1], bins=(xe, ye))
        counts += c.astype(np.int64)
    return DensityHistogram(counts, xe, ye, int(counts.sum()),
                            cfg.sample_interval * cfg.dt, len(records))


def _trajectory_cell(args):
    cfg, x, y = args
    return run_trajectory(_start_config(cfg, x, y))


def _tally(records) -> dict:
    out: dict = {}
    for rec in records:
        out[rec.termination] = out.get(rec.termination, 0) + 1
    return out


def position_density_sweep(cfg: SimulationConfig, grid_nx: int = 25, grid_ny: int = 25,
                           lo: float = 0.1, hi: float = 0.9, jobs: int = 1,
                           bins: int | None = None) -> DensityHistogram:
    """Histogram of positions visited by trajectories started at rest on a grid.

    Trajectories that end in a collision or non-finite state are excluded and
    listed in ``failures``; they never abort the sweep.
    """
    xs, _ = window_axis(cfg, grid_nx, lo, hi)
    _, ys = window_axis(cfg, grid_ny, lo, hi)
    cells = [(i, j) for i in range(grid_nx) for j in range(grid_ny)]
    records = parallel_map(_trajectory_cell, [(cfg, xs[i], ys[j]) for i, j in cells], jobs)
    good = [rec for rec in records if rec.error is None]
    hist = histogram_positions(good, cfg, bins)
    hist.failures = [(i, j, rec.error) for (i, j), rec in zip(cells, records) if rec.error]
    hist.terminations = _tally(records)
    return hist


@dataclass
class ExitTimeMap:
    """Exit time per initial cell, indexed ``[ix, iy]``.

    ``exit_time`` holds the value selected by ``criterion``; both candidate
    times are kept.  Cells that never leave carry ``t_final`` and the
    ``"no-exit"`` tag.
    """

    x: np.ndarray
    y: np.ndarray
    exit_time: np.ndarray
    tags: np.ndarray
    population_time: np.ndarray
    geometric_time: np.ndarray
    t_final: float
    criterion: str
    failures: list = field(default_factory=list)
    terminations: dict = field(default_factory=dict)


def _exit_cell(args):
    cfg, x, y, criterion = args
    rec = run_trajectory(_start_config(cfg, x, y))
    if rec.error is not None:
        return np.nan, np.nan, np.nan, FAILED, rec.termination, rec.error
    center, half = _plaquette(cfg)
    det = detect_exit_time(rec, center, half, cfg.smoothing_window)
    t_final = cfg.t_final
    geo = det.geometric_time
    if geo is None:
        value, tag = t_final, NO_EXIT
    elif criterion == "geometric":
        value, tag = geo, "geometric"
    else:
        value, tag = det.time, det.tag
    value = min(max(value, 0.0), t_final)
    return value, det.time, (t_final if geo is None else geo), tag, rec.termination, None


def exit_time_map(cfg: SimulationConfig, grid_n: int = 11, t_final: float | None = None,
                  jobs: int = 1, criterion: str = "geometric") -> ExitTimeMap:
    """Time each start on an ``n x n`` cell-centered grid stays in the plaquette.

    ``criterion`` selects the reported value: ``"geometric"`` (first sample
    outside the plaquette) or ``"population"`` (steepest smoothed drop of the
    impurity population).  Without a geometric exit a cell reports ``t_final``.
    """
    if criterion not in ("geometric", "population"):
        raise ValueError(f"unknown exit criterion {criterion!r}")
    if grid_n < 1:
        raise ValueError("grid_n must be >= 1")
    if t_final is not None:
        cfg = replace(cfg, t_final=t_final)
    xs, ys = cell_axis(cfg, grid_n)
    cells = [(i, j) for i in range(grid_n) for j in range(grid_n)]
    out = parallel_map(_exit_cell, [(cfg, xs[i], ys[j], criterion) for i, j in cells], jobs)
    shape = (grid_n, grid_n)
    res = ExitTimeMap(
        x=xs, y=ys,
        exit_time=np.array([o[0] for o in out]).reshape(shape),
        tags=np.array([o[3] for o in out], dtype=object).reshape(shape),
        population_time=np.array([o[1] for o in out]).reshape(shape),
        geometric_time=np.array([o[2] for o in out]).reshape(shape),
        t_final=cfg.t_final,
        criterion=criterion,
    )
    res.failures = [(i, j, o[5]) for (i, j), o in zip(cells, out) if o[5]]
    for o in out:
        res.terminations[o[4]] = res.terminations.get(o[4], 0) + 1
    return res


def diagonal_mask(n: int) -> np.ndarray:
    """Cells on either diagonal of an ``n x n`` grid."""
    i, j = np.indices((n, n))
    return (i == j) | (i + j == n - 1)


def diagonal_contrast(m: ExitTimeMap) -> tuple[float, float]:
    """Median exit time on the diagonals (center excluded) and off them."""
    n = len(m.x)
    diag = diagonal_mask(n)
    if n % 2:
        diag[n // 2, n // 2] = False
        off = ~diagonal_mask(n)
    else:
        off = ~diag
    return float(np.nanmedian(m.exit_time[diag])), float(np.nanmedian(m.exit_time[off]))
