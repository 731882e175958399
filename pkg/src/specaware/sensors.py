"""Sensor metadata: built-in AVIRIS family and user-supplied descriptions.

Wavelengths and FWHM are held in micrometers; files use nanometers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np


class Level(str, Enum):
    L1_RADIANCE = "L1_radiance"
    L2_REFLECTANCE = "L2_reflectance"

    @property
    def short(self) -> str:
        return self.value.split("_")[0]

    @classmethod
    def parse(cls, text: str) -> "Level":
        t = text.strip()
        for lv in cls:
            if t in (lv.value, lv.short, lv.name):
                return lv
        raise ValueError(f"unknown processing level {text!r}")


@dataclass(frozen=True, eq=False)
class SensorSpec:
    name: str
    level: Level
    wavelengths_um: np.ndarray
    fwhm_um: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "wavelengths_um", np.asarray(self.wavelengths_um, dtype=np.float64))
        object.__setattr__(self, "fwhm_um", np.asarray(self.fwhm_um, dtype=np.float64))
        object.__setattr__(self, "level", Level.parse(self.level) if isinstance(self.level, str) else self.level)

    @property
    def band_count(self) -> int:
        return int(self.wavelengths_um.shape[0])

    @property
    def key(self) -> str:
        """Identifier used for per-sensor statistics."""
        return f"{self.name}/{self.level.short}"

    def __eq__(self, other) -> bool:
        if not isinstance(other, SensorSpec):
            return NotImplemented
        return (self.name == other.name and self.level == other.level
                and np.array_equal(self.wavelengths_um, other.wavelengths_um)
                and np.array_equal(self.fwhm_um, other.fwhm_um))

    def __hash__(self):
        return hash((self.name, self.level, self.band_count))

    def permuted(self, perm) -> "SensorSpec":
        """Same sensor with bands reordered (no ordering validation)."""
        perm = np.asarray(perm)
        return SensorSpec(self.name, self.level, self.wavelengths_um[perm], self.fwhm_um[perm])

    def with_name(self, name: str) -> "SensorSpec":
        return SensorSpec(name, self.level, self.wavelengths_um, self.fwhm_um)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "level": self.level.value,
            "wavelengths_nm": [round(float(w) * 1000.0, 6) for w in self.wavelengths_um],
            "fwhm_nm": [round(float(f) * 1000.0, 6) for f in self.fwhm_um],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SensorSpec":
        required = {"name", "level", "wavelengths_nm", "fwhm_nm"}
        missing = required - set(doc)
        if missing:
            raise KeyError(f"sensor description missing keys: {sorted(missing)}")
        return cls(
            name=str(doc["name"]),
            level=Level.parse(str(doc["level"])),
            wavelengths_um=np.asarray(doc["wavelengths_nm"], dtype=np.float64) / 1000.0,
            fwhm_um=np.asarray(doc["fwhm_nm"], dtype=np.float64) / 1000.0,
        )


@dataclass(frozen=True)
class BandSelection:
    start: int
    length: int
    indices: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not self.indices:
            object.__setattr__(self, "indices", tuple(range(self.start, self.start + self.length)))

    @classmethod
    def full(cls, band_count: int) -> "BandSelection":
        return cls(0, band_count)

    def compose(self, inner: "BandSelection") -> "BandSelection":
        """Selection equal to applying ``self`` and then ``inner``."""
        return BandSelection(self.start + inner.start, inner.length)


# Band counts, ranges (nm) and FWHM (nm) per sensor family.
AVIRIS_FAMILY = {
    "AVIRIS-Classic": (224, 380.0, 2500.0, 10.0),
    "AVIRIS-NG": (425, 380.0, 2510.0, 5.0),
    "AVIRIS-3": (284, 390.0, 2500.0, 7.4),
}


def uniform_sensor(name: str, level: Level | str, bands: int, start_nm: float, stop_nm: float,
                   fwhm_nm: float) -> SensorSpec:
    wl = np.linspace(start_nm, stop_nm, bands) / 1000.0
    return SensorSpec(name, level, wl, np.full(bands, fwhm_nm / 1000.0))


def builtin_sensors() -> list[SensorSpec]:
    out = []
    for name, (bands, lo, hi, fwhm) in AVIRIS_FAMILY.items():
        for level in Level:
            out.append(uniform_sensor(name, level, bands, lo, hi, fwhm))
    return out


def get_sensor(name: str, level: Level | str = Level.L1_RADIANCE) -> SensorSpec:
    lv = Level.parse(level) if isinstance(level, str) else level
    for s in builtin_sensors():
        if s.name == name and s.level == lv:
            return s
    raise KeyError(f"no built-in sensor {name!r} at level {lv.value}")


def validate(spec: SensorSpec) -> list[str]:
    """Return invariant violations; an empty list means the spec is valid."""
    problems = []
    wl, fw = spec.wavelengths_um, spec.fwhm_um
    if wl.ndim != 1 or fw.ndim != 1:
        problems.append("wavelengths and fwhm must be 1-d")
        return problems
    if wl.shape[0] != fw.shape[0]:
        problems.append(f"band count mismatch: {wl.shape[0]} wavelengths vs {fw.shape[0]} fwhm")
    if wl.shape[0] == 0:
        problems.append("no bands")
    if not spec.name:
        problems.append("empty sensor name")
    for i in range(1, wl.shape[0]):
        if not wl[i] > wl[i - 1]:
            problems.append(f"non-increasing at {i}")
    for i, w in enumerate(wl):
        if not 0.2 < w < 3.0:
            problems.append(f"wavelength out of range at {i}: {w:g} um")
    for i, f in enumerate(fw):
        if not f > 0:
            problems.append(f"fwhm must be positive (band {i})")
    return problems


def subset(spec: SensorSpec, sel: BandSelection) -> SensorSpec:
    if sel.start < 0 or sel.length < 1 or sel.start + sel.length > spec.band_count:
        raise IndexError(
            f"selection start={sel.start} length={sel.length} out of range for "
            f"{spec.band_count} bands"
        )
    idx = np.asarray(sel.indices)
    return SensorSpec(spec.name, spec.level, spec.wavelengths_um[idx], spec.fwhm_um[idx])


def load_sensor(path: str | Path) -> SensorSpec:
    doc = json.loads(Path(path).read_text())
    spec = SensorSpec.from_dict(doc)
    problems = validate(spec)
    if problems:
        raise ValueError(f"invalid sensor description {path}: " + "; ".join(problems))
    return spec


def save_sensor(spec: SensorSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=1))
