"""Synthetic multi-sensor scenes, fp16 patch files, normalization and band views."""

from __future__ import annotations

import json
import math
import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .sensors import BandSelection, SensorSpec, get_sensor, subset

FWHM_TO_SIGMA = 1.0 / 2.355
FINE_GRID_UM = np.arange(0.300, 2.700, 0.0005)
MIN_VALID_FRACTION = 0.8


# -- scene synthesis ------------------------------------------------------------

@dataclass
class Endmember:
    """Continuous spectrum: baseline plus Gaussian bumps (amplitude, center_um, width_um)."""

    baseline: float
    bumps: list[tuple[float, float, float]]

    def __call__(self, wl_um) -> np.ndarray:
        wl = np.asarray(wl_um, dtype=np.float64)
        out = np.full(wl.shape, self.baseline)
        for amp, c, w in self.bumps:
            out += amp * np.exp(-0.5 * ((wl - c) / w) ** 2)
        return out


def endmember_library(n: int = 4, seed: int = 7) -> list[Endmember]:
    rng = np.random.default_rng(seed)
    lib = []
    for _ in range(n):
        bumps = [(float(rng.uniform(0.2, 0.8)), float(rng.uniform(0.4, 2.4)), float(rng.uniform(0.05, 0.3)))
                 for _ in range(4)]
        lib.append(Endmember(float(rng.uniform(0.05, 0.3)), bumps))
    return lib


def solar_illumination(wl_um) -> np.ndarray:
    """Blackbody-shaped curve at 5778 K, peak-normalized (always > 0)."""
    wl = np.asarray(wl_um, dtype=np.float64) * 1e-6
    h, c, k, t = 6.62607015e-34, 2.99792458e8, 1.380649e-23, 5778.0
    b = 1.0 / (wl ** 5 * (np.exp(h * c / (wl * k * t)) - 1.0))
    peak_wl = 2.897771955e-3 / t
    peak = 1.0 / (peak_wl ** 5 * (np.exp(h * c / (peak_wl * k * t)) - 1.0))
    return b / peak


@dataclass
class SceneRecipe:
    endmembers: list[Endmember]
    dominant: int = 0
    dominance: float = 2.0
    spread: float = 1.0
    smoothness: float = 4.0
    noise: float = 0.005
    missing_fraction: float = 0.0

    def __post_init__(self):
        if not 0 <= self.dominant < len(self.endmembers):
            raise ValueError("dominant endmember index out of range")

    @property
    def label(self) -> int:
        return self.dominant


def spectral_response(spec: SensorSpec, grid_um: np.ndarray = FINE_GRID_UM) -> np.ndarray:
    """(C, G) Gaussian response weights; each row sums to 1."""
    sigma = spec.fwhm_um[:, None] * FWHM_TO_SIGMA
    w = np.exp(-0.5 * ((grid_um[None, :] - spec.wavelengths_um[:, None]) / sigma) ** 2)
    return w / w.sum(axis=1, keepdims=True)


_RESPONSE_CACHE: dict[SensorSpec, np.ndarray] = {}


def _cached_response(spec: SensorSpec) -> np.ndarray:
    if spec not in _RESPONSE_CACHE:
        if len(_RESPONSE_CACHE) > 32:
            _RESPONSE_CACHE.clear()
        _RESPONSE_CACHE[spec] = spectral_response(spec)
    return _RESPONSE_CACHE[spec]


def resample(fn, spec: SensorSpec) -> np.ndarray:
    return _cached_response(spec) @ fn(FINE_GRID_UM)


def abundance_field(recipe: SceneRecipe, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """(M, H, W) nonnegative abundances summing to one per pixel."""
    m = len(recipe.endmembers)
    logits = np.empty((m, h, w))
    for i in range(m):
        f = gaussian_filter(rng.standard_normal((h, w)), recipe.smoothness, mode="wrap")
        f = (f - f.mean()) / (f.std() + 1e-12)
        logits[i] = recipe.spread * f + (recipe.dominance if i == recipe.dominant else 0.0)
    logits -= logits.max(axis=0, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=0, keepdims=True)


@dataclass
class HsiCube:
    sensor: SensorSpec
    data: np.ndarray  # (C, H, W)
    valid_fraction: float = 1.0
    label: int | None = None

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] != self.sensor.band_count:
            raise ValueError(f"cube shape {self.data.shape} inconsistent with {self.sensor.band_count} bands")
        if not 0.0 <= self.valid_fraction <= 1.0:
            raise ValueError("valid_fraction must lie in [0, 1]")


def render_cube(recipe: SceneRecipe, spec: SensorSpec, h: int, w: int, seed: int) -> tuple[HsiCube, int]:
    rng = np.random.default_rng(seed)
    abund = abundance_field(recipe, h, w, rng)
    spectra = np.stack([resample(em, spec) for em in recipe.endmembers])  # (M, C)
    cube = np.einsum("mhw,mc->chw", abund, spectra)
    if recipe.noise > 0:
        cube = cube + recipe.noise * rng.standard_normal(cube.shape)
    if spec.level.short == "L1":
        cube = cube * resample(solar_illumination, spec)[:, None, None]
    valid = 1.0
    if recipe.missing_fraction > 0:
        cols = int(round(recipe.missing_fraction * w))
        cube[:, :, w - cols:] = 0.0
        valid = 1.0 - cols / w
    return HsiCube(spec, cube.astype(np.float32), valid, recipe.label), recipe.label


# -- patch files -------------------------------------------------------------------

PATCH_MAGIC = b"HSPC"
PATCH_VERSION = 1
DTYPE_FP16 = 1
_HEAD = struct.Struct("<4sHHHHBI")


class PatchFormatError(ValueError):
    pass


def encode_patch(cube: HsiCube) -> bytes:
    if not np.all(np.isfinite(cube.data)):
        raise ValueError("patch data must be finite")
    c, h, w = cube.data.shape
    meta = cube.sensor.to_dict()
    meta["valid_fraction"] = cube.valid_fraction
    meta["label"] = cube.label
    mbytes = json.dumps(meta).encode("utf-8")
    head = _HEAD.pack(PATCH_MAGIC, PATCH_VERSION, c, h, w, DTYPE_FP16, len(mbytes))
    payload = np.ascontiguousarray(cube.data, dtype="<f2").tobytes()
    return head + mbytes + payload


def decode_patch(blob: bytes) -> HsiCube:
    if len(blob) < _HEAD.size:
        raise PatchFormatError("truncated header")
    magic, version, c, h, w, code, mlen = _HEAD.unpack_from(blob)
    if magic != PATCH_MAGIC:
        raise PatchFormatError("bad magic")
    if version != PATCH_VERSION:
        raise PatchFormatError(f"unsupported version {version}")
    if code != DTYPE_FP16:
        raise PatchFormatError(f"unsupported dtype code {code}")
    off = _HEAD.size
    if len(blob) < off + mlen:
        raise PatchFormatError("truncated metadata")
    meta = json.loads(blob[off:off + mlen].decode("utf-8"))
    off += mlen
    n = c * h * w
    if len(blob) != off + 2 * n:
        raise PatchFormatError(f"truncated payload: expected {2 * n} bytes, got {len(blob) - off}")
    data = np.frombuffer(blob, dtype="<f2", count=n, offset=off).reshape(c, h, w).copy()
    sensor = SensorSpec.from_dict(meta)
    return HsiCube(sensor, data, float(meta.get("valid_fraction", 1.0)), meta.get("label"))


def write_patch(path: str | Path, cube: HsiCube) -> None:
    Path(path).write_bytes(encode_patch(cube))


def read_patch(path: str | Path) -> HsiCube:
    return decode_patch(Path(path).read_bytes())


# -- datasets -----------------------------------------------------------------------

@dataclass
class PatchEntry:
    file: str
    sensor: str
    label: int
    valid_fraction: float


@dataclass
class Dataset:
    root: Path
    entries: list[PatchEntry]
    specs: dict[str, SensorSpec]
    stats_file: str = "stats.json"
    cache: bool = True
    rejected: int = 0
    _cache: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def sensors(self) -> list[str]:
        return sorted(self.specs)

    def load(self, i: int) -> HsiCube:
        e = self.entries[i]
        if self.cache and i in self._cache:
            return HsiCube(self.specs[e.sensor], self._cache[i], e.valid_fraction, e.label)
        cube = read_patch(self.root / e.file)
        if self.cache:
            self._cache[i] = cube.data
        return cube

    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.entries])

    def select(self, sensors: Sequence[str] | None = None, per_sensor: int | None = None,
               seed: int = 0) -> list[int]:
        """Indices of patches from ``sensors``; ``per_sensor`` draws a balanced subset."""
        keys = list(sensors) if sensors else self.sensors
        unknown = set(keys) - set(self.specs)
        if unknown:
            raise KeyError(f"dataset has no sensors {sorted(unknown)}")
        rng = np.random.default_rng(seed)
        out = []
        for key in keys:
            idx = [i for i, e in enumerate(self.entries) if e.sensor == key]
            if per_sensor is not None:
                idx = sorted(rng.choice(idx, size=min(per_sensor, len(idx)), replace=False).tolist())
            out.extend(idx)
        return sorted(out)

    def manifest(self) -> dict:
        return {
            "sensors": self.sensors,
            "patch_count": len(self.entries),
            "stats": self.stats_file,
            "sensor_specs": {k: s.to_dict() for k, s in self.specs.items()},
            "patches": [e.__dict__ for e in self.entries],
        }

    def save_manifest(self) -> None:
        (self.root / "manifest.json").write_text(json.dumps(self.manifest(), indent=1))

    @classmethod
    def open(cls, root: str | Path, cache: bool = True) -> "Dataset":
        root = Path(root)
        doc = json.loads((root / "manifest.json").read_text())
        specs = {k: SensorSpec.from_dict(v) for k, v in doc["sensor_specs"].items()}
        entries = [PatchEntry(**p) for p in doc["patches"]]
        if len(entries) != doc["patch_count"]:
            raise ValueError("manifest patch_count disagrees with patch list")
        return cls(root, entries, specs, doc.get("stats", "stats.json"), cache)


def build_dataset(root: str | Path, sensors: Sequence[SensorSpec], per_sensor: int, size: int = 64,
                  classes: int = 4, seed: int = 0, missing_rate: float = 0.1,
                  noise: float = 0.005) -> Dataset:
    """Render ``per_sensor`` accepted patches for every sensor.

    A share of candidates carries a missing edge strip; any with less than
    80% valid pixels is discarded, mimicking flightline-edge filtering.
    """
    root = Path(root)
    (root / "patches").mkdir(parents=True, exist_ok=True)
    library = endmember_library(classes)
    rng = np.random.default_rng(seed)
    entries: list[PatchEntry] = []
    specs: dict[str, SensorSpec] = {}
    rejected = 0
    for spec in sensors:
        specs[spec.key] = spec
        accepted = 0
        while accepted < per_sensor:
            label = accepted % classes
            missing = float(rng.choice([0.1, 0.3])) if rng.random() < missing_rate else 0.0
            recipe = SceneRecipe(library, dominant=label, dominance=float(rng.uniform(1.5, 2.5)),
                                 smoothness=float(rng.uniform(2.0, 6.0)), noise=noise,
                                 missing_fraction=missing)
            cube, _ = render_cube(recipe, spec, size, size, int(rng.integers(2**31)))
            if cube.valid_fraction < MIN_VALID_FRACTION:
                rejected += 1
                continue
            name = f"patches/{spec.name}_{spec.level.short}_{accepted:05d}.hspc"
            write_patch(root / name, cube)
            entries.append(PatchEntry(name, spec.key, label, cube.valid_fraction))
            accepted += 1
    ds = Dataset(root, entries, specs, rejected=rejected)
    ds.save_manifest()
    return ds


def default_sensor_set(levels: Sequence[str] = ("L1",)) -> list[SensorSpec]:
    return [get_sensor(name, lv) for lv in levels for name in ("AVIRIS-Classic", "AVIRIS-NG", "AVIRIS-3")]


# -- statistics & normalization ---------------------------------------------------------

def nearest_rank(sorted_vals: np.ndarray, q: float) -> np.ndarray:
    """Nearest-rank percentile along axis 0 of a sorted array."""
    n = sorted_vals.shape[0]
    rank = max(1, math.ceil(q * n - 1e-9))
    return sorted_vals[min(rank, n) - 1]


@dataclass
class SensorStats:
    p1: np.ndarray
    p99: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    floored: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: np.asarray(getattr(self, k)).tolist() for k in ("p1", "p99", "mean", "std")} | {
            "floored": self.floored}

    @classmethod
    def from_dict(cls, d: dict) -> "SensorStats":
        return cls(*(np.asarray(d[k], dtype=np.float64) for k in ("p1", "p99", "mean", "std")),
                   floored=list(d.get("floored", [])))


STD_FLOOR = 1e-6


def stats_from_population(pixels: np.ndarray, clip: float = 0.01) -> SensorStats:
    """Per-band stats from a (P, C) pixel population."""
    if pixels.shape[0] == 0:
        raise ValueError("empty pixel population")
    srt = np.sort(pixels, axis=0)
    p1 = nearest_rank(srt, clip)
    p99 = nearest_rank(srt, 1.0 - clip)
    clipped = np.clip(pixels, p1, p99)
    mean = clipped.mean(axis=0)
    std = clipped.std(axis=0)
    floored = [int(i) for i in np.flatnonzero(std < STD_FLOOR)]
    std = np.maximum(std, STD_FLOOR)
    return SensorStats(p1, p99, mean, std, floored)


@dataclass
class NormStats:
    sensors: dict[str, SensorStats]

    def __getitem__(self, key: str) -> SensorStats:
        if key not in self.sensors:
            raise KeyError(f"no normalization stats for sensor {key!r}")
        return self.sensors[key]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({k: v.to_dict() for k, v in self.sensors.items()}))

    @classmethod
    def load(cls, path: str | Path) -> "NormStats":
        doc = json.loads(Path(path).read_text())
        return cls({k: SensorStats.from_dict(v) for k, v in doc.items()})


def valid_pixels(cube: HsiCube) -> np.ndarray:
    """(P, C) spectra of pixels that are not all-zero fill."""
    flat = cube.data.reshape(cube.data.shape[0], -1).T.astype(np.float64)
    return flat[np.any(flat != 0, axis=1)]


def compute_stats(dataset: Dataset, clip: float = 0.01, pixels_per_patch: int = 256,
                  seed: int = 0) -> NormStats:
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(seed)
    pops: dict[str, list[np.ndarray]] = {}
    for i in range(len(dataset)):
        px = valid_pixels(dataset.load(i))
        if pixels_per_patch and px.shape[0] > pixels_per_patch:
            px = px[rng.choice(px.shape[0], size=pixels_per_patch, replace=False)]
        pops.setdefault(dataset.entries[i].sensor, []).append(px)
    return NormStats({k: stats_from_population(np.concatenate(v), clip) for k, v in pops.items()})


def normalize(cube: HsiCube | np.ndarray, stats: SensorStats | NormStats, key: str | None = None) -> np.ndarray:
    """Clip each band to [p1, p99], then standardize with the clipped mean/std."""
    if isinstance(cube, HsiCube):
        key = key or cube.sensor.key
        data = cube.data
    else:
        data = cube
    s = stats[key] if isinstance(stats, NormStats) else stats
    x = data.astype(np.float64)
    x = np.clip(x, s.p1[:, None, None], s.p99[:, None, None])
    return ((x - s.mean[:, None, None]) / s.std[:, None, None]).astype(np.float32)


# -- band views ----------------------------------------------------------------------------

def candidate_starts(band_count: int, window: int = 100, stride: int = 32) -> list[int]:
    """Stride grid of window starts, plus the terminal start so the last bands are reachable."""
    if window >= band_count:
        return [0]
    starts = list(range(0, band_count - window + 1, stride))
    if starts[-1] != band_count - window:
        starts.append(band_count - window)
    return starts


def sample_band_view(spec: SensorSpec, window: int | None = 100, stride: int = 32,
                     seed: int | np.random.Generator | None = None) -> BandSelection:
    if window is None or window == spec.band_count:
        return BandSelection.full(spec.band_count)
    if spec.band_count < window:
        warnings.warn(f"{spec.key} has {spec.band_count} bands < window {window}; using all bands")
        return BandSelection.full(spec.band_count)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    starts = candidate_starts(spec.band_count, window, stride)
    return BandSelection(int(starts[rng.integers(len(starts))]), window)


def view_seed(global_seed: int, shard: int, step: int) -> np.random.Generator:
    """Independent stream per (shard, step): distinct spectral views per device-batch."""
    return np.random.default_rng(np.random.SeedSequence([global_seed, shard, step]))


@dataclass
class Batch:
    cubes: np.ndarray  # (B, C, H, W) normalized view
    spec: SensorSpec  # view-subset spec
    labels: np.ndarray
    ids: list[int]
    selection: BandSelection
    shard: int
    step: int


def epoch_plan(dataset: Dataset, indices: Sequence[int], batch: int, seed: int, epoch: int) -> list[list[int]]:
    """Single-sensor batches covering every index exactly once, in shuffled order."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch, 0xBA7C]))
    by_sensor: dict[str, list[int]] = {}
    for i in indices:
        by_sensor.setdefault(dataset.entries[i].sensor, []).append(i)
    batches = []
    for key in sorted(by_sensor):
        ids = rng.permutation(by_sensor[key]).tolist()
        batches.extend(ids[j:j + batch] for j in range(0, len(ids), batch))
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def batch_iterator(dataset: Dataset, stats: NormStats, batch: int, seed: int, epoch: int = 0,
                   indices: Sequence[int] | None = None, workers: int = 1, window: int | None = 100,
                   stride: int = 32, shards: int = 1, step_offset: int = 0) -> Iterator[Batch]:
    indices = list(range(len(dataset))) if indices is None else list(indices)
    plan = epoch_plan(dataset, indices, batch, seed, epoch)

    def load(args):
        j, ids = args
        step = step_offset + j
        shard = j % shards
        key = dataset.entries[ids[0]].sensor
        spec = dataset.specs[key]
        sel = sample_band_view(spec, window, stride, view_seed(seed, shard, step))
        idx = np.asarray(sel.indices)
        cubes = np.stack([normalize(dataset.load(i), stats)[idx] for i in ids])
        labels = np.array([dataset.entries[i].label for i in ids])
        return Batch(cubes, subset(spec, sel), labels, list(ids), sel, shard, step)

    if workers <= 1:
        for item in enumerate(plan):
            yield load(item)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            yield from pool.map(load, enumerate(plan))
