"""Driving noise: truncated cylindrical Wiener paths and Poisson random measures.

The Wiener process is kept as per-mode increments on a time grid (mode ``k``
is the coefficient of the basis slot ``h_k``).  A Poisson random measure on
``marks x (0, T]`` is kept as a time-sorted atom list; each layer of the
intensity ladder is simulated from its own substream.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .measure_core import CountingMeasure, IntensityMeasure, levy_integrability
from .rng import Stream, tag_id

__all__ = [
    "GridError",
    "BundleDecodeError",
    "WienerPath",
    "PrmRealization",
    "NoiseBundle",
    "InitialLaw",
    "simulate_wiener",
    "simulate_prm",
    "simulate_bundle",
    "count_process",
    "count_box",
    "split_at",
    "merge",
    "serialize",
    "deserialize",
    "FORMAT_VERSION",
]

FORMAT_VERSION = 1
_MAGIC = b"YWNB"


class GridError(ValueError):
    """Invalid time grid or off-grid time."""


class BundleDecodeError(ValueError):
    """A serialized bundle could not be decoded."""


def _check_grid(grid: np.ndarray) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1:
        raise GridError("grid must be a nonempty 1-d array")
    if np.any(np.diff(grid) <= 0):
        raise GridError("grid must be strictly increasing")
    return grid


def grid_index(grid: np.ndarray, t: float) -> int:
    """Position of ``t`` in ``grid``; raises GridError when ``t`` is off-grid."""
    i = int(np.searchsorted(grid, t))
    if i >= grid.size or grid[i] != t:
        raise GridError(f"time {t!r} is not a grid point")
    return i


@dataclass(frozen=True, eq=False)
class WienerPath:
    """Increments of ``K`` independent Brownian motions on a grid."""

    grid: np.ndarray
    increments: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim != 2 or inc.shape[0] != grid.size - 1:
            raise GridError("increments must have shape (len(grid) - 1, K)")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "increments", inc)

    @property
    def modes(self) -> int:
        return self.increments.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    def values(self) -> np.ndarray:
        """beta_k(t_i) - beta_k(t_0) for every grid point, shape (M+1, K)."""
        out = np.zeros((self.grid.size, self.modes))
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out

    def at(self, t: float) -> np.ndarray:
        i = grid_index(self.grid, t)
        return self.increments[:i].sum(axis=0)

    def coarsen(self, grid: np.ndarray) -> "WienerPath":
        """Aggregate increments onto a subgrid of this path's grid."""
        grid = _check_grid(grid)
        idx = np.clip(np.searchsorted(self.grid, grid), 0, self.grid.size - 1)
        lower = np.clip(idx - 1, 0, None)
        idx = np.where(np.abs(self.grid[lower] - grid) < np.abs(self.grid[idx] - grid), lower, idx)
        if np.any(np.abs(self.grid[idx] - grid) > 1e-12 * max(self.horizon, 1.0)):
            raise GridError("target grid is not a subgrid")
        vals = self.values()[idx]
        return WienerPath(grid, np.diff(vals, axis=0))

    def equals(self, other: "WienerPath") -> bool:
        return np.array_equal(self.grid, other.grid) and np.array_equal(self.increments, other.increments)


def simulate_wiener(modes: int, grid, stream: Stream) -> WienerPath:
    """Independent Brownian increments, one substream per mode."""
    if modes < 1:
        raise ValueError("need at least one mode")
    grid = _check_grid(grid)
    if grid[0] != 0.0:
        raise GridError("grid must start at 0")
    sd = np.sqrt(np.diff(grid))
    inc = np.empty((grid.size - 1, modes))
    for k in range(modes):
        inc[:, k] = sd * stream.generator("wiener", k).standard_normal(grid.size - 1)
    return WienerPath(grid, inc)


@dataclass(frozen=True, eq=False)
class PrmRealization:
    """Atoms ``(t_i, z_i, layer_i)`` of one Poisson random measure draw on (start, T]."""

    times: np.ndarray
    marks: np.ndarray
    layers: np.ndarray
    horizon: float
    intensity_ref: str = ""
    n_max: int | None = None
    start: float = 0.0
    truncation_bound: float = 0.0

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        marks = np.asarray(self.marks, dtype=float)
        if marks.ndim == 1:
            marks = marks.reshape(times.size, -1) if times.size else marks.reshape(0, max(marks.size, 1))
        layers = np.asarray(self.layers, dtype=np.int64).reshape(-1)
        if not (times.size == marks.shape[0] == layers.size):
            raise ValueError("times, marks and layers differ in length")
        if times.size and (times.min() <= self.start or times.max() > self.horizon):
            raise ValueError("atom times must lie in (start, T]")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "layers", layers)

    def __len__(self) -> int:
        return self.times.size

    @property
    def mark_dim(self) -> int:
        return self.marks.shape[1]

    def counting_measure(self, n_layers: int | None = None) -> CountingMeasure:
        return CountingMeasure(self.marks, self.layers, n_layers or max(self.n_max or 0, int(self.layers.max(initial=1))))

    def window(self, t0: float, t1: float) -> "PrmRealization":
        keep = (self.times > t0) & (self.times <= t1)
        return PrmRealization(
            self.times[keep], self.marks[keep], self.layers[keep], t1,
            self.intensity_ref, self.n_max, t0, self.truncation_bound,
        )

    def equals(self, other: "PrmRealization") -> bool:
        return (
            np.array_equal(self.times, other.times)
            and np.array_equal(self.marks, other.marks)
            and np.array_equal(self.layers, other.layers)
            and self.horizon == other.horizon
            and self.start == other.start
        )


def _sorted_atoms(times, marks, layers):
    counter = np.arange(times.size)
    order = np.lexsort((counter, layers, times))
    return times[order], marks[order], layers[order]


def simulate_prm(nu: IntensityMeasure, n_max: int | None, T: float, stream: Stream) -> PrmRealization:
    """Draw the atoms of a time-homogeneous PRM with intensity ``nu ⊗ Leb`` on (0, T].

    Only layers ``1..n_max`` are instantiated.  The discarded tail is
    reported as ``truncation_bound = T * int min(1, |z|^2) d nu`` over the
    dropped layers.
    """
    if T <= 0:
        raise ValueError("horizon must be positive")
    n_max = nu.n_layers if n_max is None else n_max
    if not 0 <= n_max <= nu.n_layers:
        raise IndexError(f"n_max {n_max} outside 0..{nu.n_layers}")
    ts, zs, ls = [], [], []
    for layer in nu.layers[:n_max]:
        rng = stream.generator("prm", layer.index)
        count = int(rng.poisson(layer.mass * T)) if layer.mass > 0 else 0
        t = T * (1.0 - rng.random(count))
        ts.append(t)
        zs.append(layer.sample(rng, count))
        ls.append(np.full(count, layer.index, dtype=np.int64))
    if ts:
        times, marks, layers = _sorted_atoms(np.concatenate(ts), np.concatenate(zs), np.concatenate(ls))
    else:
        times, marks, layers = np.empty(0), np.empty((0, nu.dimension)), np.empty(0, np.int64)
    tail = 0.0
    if n_max < nu.n_layers:
        tail = T * float(levy_integrability(nu, 2.0, n_from=n_max + 1))
    return PrmRealization(times, marks, layers, T, nu.name, n_max, 0.0, tail)


def count_process(eta: PrmRealization, U: Callable | None, t: float) -> int:
    """N(t, U): atoms with time <= t whose mark satisfies predicate ``U``."""
    sel = eta.times <= t
    if U is not None and sel.any():
        sel[sel] = np.asarray(U(eta.marks[sel]), dtype=bool)
    return int(sel.sum())


def count_box(eta: PrmRealization, t0: float, t1: float, U: Callable | None = None) -> int:
    """eta(U x (t0, t1])."""
    return count_process(eta, U, t1) - count_process(eta, U, t0)


@dataclass(frozen=True)
class InitialLaw:
    """Gaussian law of the initial Galerkin coefficients (scale 0: deterministic)."""

    mean: tuple
    scale: float = 0.0

    def draw(self, stream: Stream) -> np.ndarray:
        mean = np.asarray(self.mean, dtype=float)
        if self.scale == 0.0:
            return mean.copy()
        return mean + self.scale * stream.generator("initial").standard_normal(mean.size)


@dataclass(frozen=True, eq=False)
class NoiseBundle:
    """The input triple (W, eta, U0) with the seed metadata that produced it.

    A bundle returned by :func:`split_at` is a view: ``wiener.grid`` and the
    PRM window start at the split time for the future part, and the future
    part carries no initial condition.
    """

    wiener: WienerPath
    prm: PrmRealization
    initial: np.ndarray
    master_seed: int = 0
    stream_ids: dict = field(default_factory=dict)
    config_digest: str = ""

    @property
    def horizon(self) -> float:
        return self.prm.horizon

    def equals(self, other: "NoiseBundle") -> bool:
        return (
            self.wiener.equals(other.wiener)
            and self.prm.equals(other.prm)
            and np.array_equal(self.initial, other.initial)
            and self.master_seed == other.master_seed
            and self.stream_ids == other.stream_ids
            and self.config_digest == other.config_digest
        )


def simulate_bundle(
    nu: IntensityMeasure,
    grid,
    modes: int,
    initial: InitialLaw,
    master_seed: int,
    path_index: int = 0,
    n_max: int | None = None,
    config_digest: str = "",
) -> NoiseBundle:
    """Simulate one bundle from its own substream family."""
    grid = _check_grid(grid)
    stream = Stream(master_seed, path_index)
    w = simulate_wiener(modes, grid, stream)
    eta = simulate_prm(nu, n_max, float(grid[-1]), stream)
    u0 = initial.draw(stream)
    ids = {
        "path_index": int(path_index),
        "wiener": tag_id("wiener"),
        "prm": tag_id("prm"),
        "initial": tag_id("initial"),
    }
    return NoiseBundle(w, eta, u0, int(master_seed), ids, config_digest)


def split_at(bundle: NoiseBundle, t: float) -> tuple[NoiseBundle, NoiseBundle]:
    """Past view (noise on [0, t]) and future view (increments and atoms after t)."""
    w = bundle.wiener
    i = grid_index(w.grid, t)
    past_w = WienerPath(w.grid[: i + 1], w.increments[:i])
    fut_w = WienerPath(w.grid[i:], w.increments[i:])
    prm = bundle.prm
    cut = int(np.searchsorted(prm.times, t, side="right"))
    past_eta = PrmRealization(
        prm.times[:cut], prm.marks[:cut], prm.layers[:cut], t,
        prm.intensity_ref, prm.n_max, prm.start, prm.truncation_bound,
    )
    fut_eta = PrmRealization(
        prm.times[cut:], prm.marks[cut:], prm.layers[cut:], prm.horizon,
        prm.intensity_ref, prm.n_max, t, prm.truncation_bound,
    )
    meta = dict(master_seed=bundle.master_seed, stream_ids=dict(bundle.stream_ids), config_digest=bundle.config_digest)
    past = NoiseBundle(past_w, past_eta, bundle.initial, **meta)
    future = NoiseBundle(fut_w, fut_eta, np.empty(0), **meta)
    return past, future


def merge(past: NoiseBundle, future: NoiseBundle) -> NoiseBundle:
    """Inverse of :func:`split_at`."""
    if past.wiener.grid[-1] != future.wiener.grid[0] or past.prm.horizon != future.prm.start:
        raise GridError("views do not meet at a common time")
    w = WienerPath(
        np.concatenate([past.wiener.grid, future.wiener.grid[1:]]),
        np.concatenate([past.wiener.increments, future.wiener.increments]),
    )
    p, f = past.prm, future.prm
    eta = PrmRealization(
        np.concatenate([p.times, f.times]), np.concatenate([p.marks, f.marks]),
        np.concatenate([p.layers, f.layers]), f.horizon, p.intensity_ref, p.n_max, p.start,
        p.truncation_bound,
    )
    return NoiseBundle(w, eta, past.initial, past.master_seed, dict(past.stream_ids), past.config_digest)


# ----------------------------------------------------------------------
# binary format
#
#   magic "YWNB" | u16 version | u32 header length | header (UTF-8 JSON)
#   then three blocks, each u64 byte length + payload, little-endian f8/i8:
#     wiener  : grid (M+1) then increments (M x K, row-major)
#     atoms   : n records of (t f8, layer i8, mark f8 x d)
#     initial : f8 x len(U0)


def _block(payload: bytes) -> bytes:
    return struct.pack("<Q", len(payload)) + payload


def serialize(bundle: NoiseBundle) -> bytes:
    w, eta = bundle.wiener, bundle.prm
    header = {
        "version": FORMAT_VERSION,
        "endianness": "<",
        "master_seed": int(bundle.master_seed),
        "stream_ids": bundle.stream_ids,
        "config_digest": bundle.config_digest,
        "M": int(w.grid.size - 1),
        "K": int(w.modes),
        "n_atoms": len(eta),
        "mark_dim": int(eta.mark_dim),
        "n_initial": int(bundle.initial.size),
        "horizon": float(eta.horizon),
        "start": float(eta.start),
        "intensity_ref": eta.intensity_ref,
        "n_max": eta.n_max,
        "truncation_bound": float(eta.truncation_bound),
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    rec = np.dtype([("t", "<f8"), ("layer", "<i8"), ("mark", "<f8", (eta.mark_dim,))])
    atoms = np.empty(len(eta), dtype=rec)
    atoms["t"], atoms["layer"], atoms["mark"] = eta.times, eta.layers, eta.marks
    out = io.BytesIO()
    out.write(_MAGIC + struct.pack("<HI", FORMAT_VERSION, len(head)) + head)
    out.write(_block(w.grid.astype("<f8").tobytes() + w.increments.astype("<f8").tobytes()))
    out.write(_block(atoms.tobytes()))
    out.write(_block(np.asarray(bundle.initial, dtype="<f8").tobytes()))
    return out.getvalue()


def _take(buf: bytes, pos: int, n: int) -> tuple[bytes, int]:
    if n < 0 or pos + n > len(buf):
        raise BundleDecodeError("truncated stream")
    return buf[pos : pos + n], pos + n


def _take_block(buf: bytes, pos: int, expected: int) -> tuple[bytes, int]:
    raw, pos = _take(buf, pos, 8)
    (n,) = struct.unpack("<Q", raw)
    if n != expected:
        raise BundleDecodeError(f"block length {n} does not match header ({expected})")
    return _take(buf, pos, n)


def deserialize(data: bytes) -> NoiseBundle:
    buf = bytes(data)
    magic, pos = _take(buf, 0, 4)
    if magic != _MAGIC:
        raise BundleDecodeError("not a noise bundle (bad magic)")
    raw, pos = _take(buf, pos, 6)
    version, hlen = struct.unpack("<HI", raw)
    if version != FORMAT_VERSION:
        raise BundleDecodeError(f"unsupported format version {version}")
    raw, pos = _take(buf, pos, hlen)
    try:
        h = json.loads(raw.decode("utf-8"))
        M, K, n, d, n0 = (int(h[k]) for k in ("M", "K", "n_atoms", "mark_dim", "n_initial"))
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise BundleDecodeError(f"bad header: {exc}") from None
    if min(M, K, n, d, n0) < 0:
        raise BundleDecodeError("negative size in header")
    raw, pos = _take_block(buf, pos, 8 * ((M + 1) + M * K))
    arr = np.frombuffer(raw, dtype="<f8")
    grid = arr[: M + 1].astype(float)
    inc = arr[M + 1 :].reshape(M, K).astype(float)
    rec = np.dtype([("t", "<f8"), ("layer", "<i8"), ("mark", "<f8", (d,))])
    raw, pos = _take_block(buf, pos, rec.itemsize * n)
    atoms = np.frombuffer(raw, dtype=rec)
    raw, pos = _take_block(buf, pos, 8 * n0)
    u0 = np.frombuffer(raw, dtype="<f8").astype(float)
    if pos != len(buf):
        raise BundleDecodeError("trailing bytes after bundle")
    try:
        w = WienerPath(grid, inc)
        eta = PrmRealization(
            atoms["t"].astype(float), atoms["mark"].astype(float).reshape(n, d),
            atoms["layer"].astype(np.int64), h["horizon"], h["intensity_ref"], h["n_max"],
            h["start"], h["truncation_bound"],
        )
    except ValueError as exc:
        raise BundleDecodeError(str(exc)) from None
    return NoiseBundle(w, eta, u0, h["master_seed"], h["stream_ids"], h["config_digest"])


def digest(obj) -> str:
    """SHA-256 of the canonical JSON encoding of ``obj``."""
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()
