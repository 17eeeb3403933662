"""Road section geometry: curvature profiles, banking, and difficulty index.

Sections are sampled at a fixed arclength spacing. Curvature is piecewise
linear in arclength (arcs joined by linear transition spirals), banking
follows the highway superelevation rule e = V^2/(127 R) - 0.14 capped at
8 degrees, and the difficulty index is tan(theta_ideal - theta_actual):
zero wherever the built bank meets the ideal one, positive where the cap
leaves the road under-banked for its rated speed.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .config import parse_kv_file

SAMPLE_SPACING_M = 0.5
BANK_CAP_RAD = math.radians(8.0)
SIDE_FRICTION_CONST = 0.14
# Curvature may move at most this much between adjacent samples.
MAX_KAPPA_STEP = 0.05


def ideal_bank_ratio(speed_limit_kph: float, radius_m: float) -> float:
    """Superelevation rate e for a curve of the given radius at the given speed.

    e = V^2 / (127 R) - 0.14 with V in km/h and R in metres. Negative values
    mean side friction alone covers the curve at that speed.
    """
    if speed_limit_kph <= 0:
        raise ValueError(f"speed limit must be positive, got {speed_limit_kph}")
    if radius_m <= 0:
        raise ValueError(f"radius must be positive, got {radius_m}")
    return speed_limit_kph**2 / (127.0 * radius_m) - SIDE_FRICTION_CONST


def bank_angles(speed_limit_kph: float, radius_m: float) -> tuple[float, float]:
    """(theta_ideal, theta_actual) in radians for one curve.

    theta_ideal = arctan(e) clamped below at zero; theta_actual additionally
    capped at 8 degrees, the steepest bank a public road gets built with.
    """
    e = ideal_bank_ratio(speed_limit_kph, radius_m)
    theta_ideal = max(math.atan(e), 0.0)
    return theta_ideal, min(theta_ideal, BANK_CAP_RAD)


def _bank_profile(kappa: np.ndarray, rated_speed_kph: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample (theta_ideal, theta_actual) from a curvature profile.

    Straights (kappa == 0) have an infinite radius and therefore no bank.
    """
    with np.errstate(divide="ignore"):
        e = rated_speed_kph**2 * np.abs(kappa) / 127.0 - SIDE_FRICTION_CONST
    theta_ideal = np.maximum(np.arctan(e), 0.0)
    return theta_ideal, np.minimum(theta_ideal, BANK_CAP_RAD)


@dataclass(frozen=True)
class RoadSection:
    """Sampled road geometry, immutable once built.

    Arrays share one length: s [m], kappa [1/m, signed, + is a left turn],
    bank [rad, unsigned magnitude; the built bank leans into the turn],
    heading [rad], x, y [m].
    """

    section_id: str
    rated_speed_kph: float
    s: np.ndarray
    kappa: np.ndarray
    bank: np.ndarray
    heading: np.ndarray
    x: np.ndarray
    y: np.ndarray
    # Arclength fractions where the surface friction regime may change.
    friction_zone_splits: tuple[float, ...] = ()

    def __post_init__(self):
        if any(not 0.0 < f < 1.0 for f in self.friction_zone_splits):
            raise ValueError("friction zone splits must be interior fractions")
        if list(self.friction_zone_splits) != sorted(self.friction_zone_splits):
            raise ValueError("friction zone splits must ascend")
        n = len(self.s)
        for name in ("kappa", "bank", "heading", "x", "y"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length mismatch")
        if n < 2:
            raise ValueError("section needs at least two samples")
        ds = np.diff(self.s)
        if not np.all(ds > 0):
            raise ValueError("s must be strictly increasing")
        if abs(ds.max() - ds.min()) > 1e-9 or ds[0] > 1.0 + 1e-9:
            raise ValueError("sample spacing must be uniform and at most 1 m")
        if np.any(np.abs(self.bank) > BANK_CAP_RAD + 1e-9):
            raise ValueError("bank exceeds the 8 degree cap")
        if np.any(np.abs(np.diff(self.kappa)) > MAX_KAPPA_STEP):
            raise ValueError("curvature discontinuity between samples")
        if self.rated_speed_kph <= 0:
            raise ValueError("rated speed must be positive")
        for name in ("s", "kappa", "bank", "heading", "x", "y"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite samples")
            arr.setflags(write=False)

    @property
    def length_m(self) -> float:
        return float(self.s[-1])

    @property
    def spacing_m(self) -> float:
        return float(self.s[1] - self.s[0])

    @property
    def signed_bank(self) -> np.ndarray:
        """Bank with the sign of the turn it leans into."""
        return np.sign(self.kappa) * self.bank

    def samples(self) -> np.ndarray:
        """(n, 6) array with columns s, kappa, bank, heading, x, y."""
        return np.column_stack([self.s, self.kappa, self.bank, self.heading, self.x, self.y])

    def interp(self, s_query: np.ndarray, channel: str) -> np.ndarray:
        """Linear interpolation of one channel; straight-line behaviour outside.

        Geometry channels (x, y, heading) extrapolate along the entry and exit
        tangents; kappa and bank are zero outside the section.
        """
        sq = np.asarray(s_query, dtype=float)
        if channel in ("kappa", "bank", "signed_bank"):
            vals = self.signed_bank if channel == "signed_bank" else getattr(self, channel)
            return np.interp(sq, self.s, vals, left=0.0, right=0.0)
        if channel == "heading":
            return np.interp(sq, self.s, self.heading)
        if channel in ("x", "y"):
            base = np.interp(sq, self.s, getattr(self, channel))
            before = sq < self.s[0]
            after = sq > self.s[-1]
            if np.any(before):
                d = sq[before] - self.s[0]
                t = math.cos(self.heading[0]) if channel == "x" else math.sin(self.heading[0])
                base[before] = getattr(self, channel)[0] + d * t
            if np.any(after):
                d = sq[after] - self.s[-1]
                t = math.cos(self.heading[-1]) if channel == "x" else math.sin(self.heading[-1])
                base[after] = getattr(self, channel)[-1] + d * t
            return base
        raise KeyError(channel)

    def export_csv(self, target) -> None:
        """Write samples as CSV columns (s, kappa, theta_actual, x, y, heading)."""

        def _write(fh):
            w = csv.writer(fh)
            w.writerow(["s", "kappa", "theta_actual", "x", "y", "heading"])
            for i in range(len(self.s)):
                w.writerow([
                    repr(float(self.s[i])),
                    repr(float(self.kappa[i])),
                    repr(float(self.bank[i])),
                    repr(float(self.x[i])),
                    repr(float(self.y[i])),
                    repr(float(self.heading[i])),
                ])

        if isinstance(target, (str, bytes)) or hasattr(target, "__fspath__"):
            with open(target, "w", newline="", encoding="utf-8") as fh:
                _write(fh)
        else:
            _write(target)


@dataclass(frozen=True)
class RdiProfile:
    """Per-sample road difficulty index tan(theta_ideal - theta_actual)."""

    section_id: str
    values: np.ndarray

    def __post_init__(self):
        if np.any(self.values < -1e-12) or not np.all(np.isfinite(self.values)):
            raise ValueError("difficulty index must be finite and non-negative")
        self.values.setflags(write=False)


def rdi_profile(section: RoadSection) -> RdiProfile:
    theta_ideal, theta_actual = _bank_profile(section.kappa, section.rated_speed_kph)
    return RdiProfile(section.section_id, np.tan(theta_ideal - theta_actual))


# --- scenario construction -------------------------------------------------

# A segment is (length_m, kappa_start, kappa_end); curvature interpolates
# linearly over the segment, so arcs are (L, k, k) and spirals (L, k0, k1).
Segment = tuple[float, float, float]


@dataclass(frozen=True)
class ScenarioSpec:
    """Parameterized scenario: a curvature program plus a rated speed.

    friction_zone_splits lists arclength fractions where the surface friction
    regime may change (empty means one uniform surface).
    """

    name: str
    rated_speed_kph: float
    segments: tuple[Segment, ...]
    friction_zone_splits: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.segments:
            raise ValueError("scenario needs at least one segment")
        for seg in self.segments:
            if seg[0]  <= 0:
                raise ValueError(f"segment length must be positive: {seg}")
        if any(not 0.0 < f < 1.0 for f in self.friction_zone_splits):
            raise ValueError("friction zone splits must be interior fractions")

    @property
    def length_m(self) -> float:
        return sum(seg[0] for seg in self.segments)


def _curve_unit(radius_m: float, arc_m: float, spiral_m: float, left: bool = True) -> list[Segment]:
    k = (1.0 if left else -1.0) / radius_m
    return [(spiral_m, 0.0, k), (arc_m, k, k), (spiral_m, k, 0.0)]


def _long_turn_spec() -> ScenarioSpec:
    # 600 m curved portion: spiral in, 150 m arc, tightening spiral, 100 m arc,
    # long spiral out. Radii stay within the 100..150 m band.
    segments: list[Segment] = [(100.0, 0.0, 0.0)]
    segments += [
        (60.0, 0.0, 1 / 150),
        (180.0, 1 / 150, 1 / 150),
        (60.0, 1 / 150, 1 / 100),
        (180.0, 1 / 100, 1 / 100),
        (120.0, 1 / 100, 0.0),
    ]
    segments.append((100.0, 0.0, 0.0))
    return ScenarioSpec("long_turn", 80.0, tuple(segments))


def _s_turn_segments(radius_first: float, radius_second: float) -> tuple[Segment, ...]:
    segments: list[Segment] = [(80.0, 0.0, 0.0)]
    segments += _curve_unit(radius_first, 200.0, 50.0, left=True)
    segments += _curve_unit(radius_second, 200.0, 50.0, left=False)
    segments.append((80.0, 0.0, 0.0))
    return tuple(segments)


def s_turn_spec(radius_first: float = 90.0, radius_second: float = 140.0,
                name: str = "s_turn") -> ScenarioSpec:
    """Two opposite ~300 m curves. Radii must sit in the 55..187 m band."""
    for r in (radius_first, radius_second):
        if not 55.0 <= r <= 187.0:
            raise ValueError(f"s_turn radius {r} outside 55..187 m")
    return ScenarioSpec(name, 70.0, _s_turn_segments(radius_first, radius_second))


def _sharp_turn_spec() -> ScenarioSpec:
    segments: list[Segment] = [(60.0, 0.0, 0.0)]
    segments += _curve_unit(30.0, 80.0, 10.0, left=True)
    segments.append((60.0, 0.0, 0.0))
    return ScenarioSpec("sharp_turn", 20.0, tuple(segments))


def _slalom_spec() -> ScenarioSpec:
    # Four alternating 25 m radius gates; rated well above what the geometry
    # comfortably supports, which is the point.
    segments: list[Segment] = [(40.0, 0.0, 0.0)]
    for i in range(4):
        segments += _curve_unit(25.0, 20.0, 15.0, left=(i % 2 == 0))
    segments.append((40.0, 0.0, 0.0))
    return ScenarioSpec("slalom", 50.0, tuple(segments))


def _lane_change_spec() -> ScenarioSpec:
    segments: list[Segment] = [(50.0, 0.0, 0.0)]
    segments += _curve_unit(30.0, 4.0, 6.0, left=True)
    segments += _curve_unit(30.0, 4.0, 6.0, left=False)
    segments.append((50.0, 0.0, 0.0))
    return ScenarioSpec("lane_change", 60.0, tuple(segments))


def _ninety_turn_spec() -> ScenarioSpec:
    # Total heading change pi/2: two 8 m spirals contribute 8*kappa together.
    radius = 20.0
    spiral = 8.0
    arc = (math.pi / 2 - spiral / radius) * radius
    segments: list[Segment] = [(60.0, 0.0, 0.0)]
    segments += _curve_unit(radius, arc, spiral, left=True)
    segments.append((60.0, 0.0, 0.0))
    return ScenarioSpec("ninety_turn", 40.0, tuple(segments))


def _sine_drive_spec() -> ScenarioSpec:
    # Smooth sinusoidal curvature, three periods, approximated piecewise
    # linearly at 5 m resolution.
    amplitude = 1 / 60
    wavelength = 120.0
    step = 5.0
    total = 3 * wavelength
    segments: list[Segment] = [(40.0, 0.0, 0.0)]
    n = int(total / step)
    for i in range(n):
        k0 = amplitude * math.sin(2 * math.pi * (i * step) / wavelength)
        k1 = amplitude * math.sin(2 * math.pi * ((i + 1) * step) / wavelength)
        segments.append((step, k0, k1))
    segments.append((40.0, 0.0, 0.0))
    return ScenarioSpec("sine_drive", 70.0, tuple(segments))


_BUILDERS = {
    "long_turn": _long_turn_spec,
    "s_turn": s_turn_spec,
    "s_turn_split_mu": lambda: ScenarioSpec(
        "s_turn_split_mu", 70.0, _s_turn_segments(90.0, 140.0),
        friction_zone_splits=(0.5,)),
    "sharp_turn": _sharp_turn_spec,
    "slalom": _slalom_spec,
    "lane_change": _lane_change_spec,
    "ninety_turn": _ninety_turn_spec,
    "sine_drive": _sine_drive_spec,
}

SCENARIO_NAMES = tuple(_BUILDERS)
EXTREME_SCENARIOS = ("slalom", "lane_change", "ninety_turn", "sine_drive")
NORMAL_SCENARIOS = tuple(n for n in SCENARIO_NAMES if n not in EXTREME_SCENARIOS)


def scenario_spec(name: str) -> ScenarioSpec:
    try:
        return _BUILDERS[name]()
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; known: {', '.join(SCENARIO_NAMES)}") from None


def load_scenario_file(path) -> ScenarioSpec:
    """Scenario from a key = value file.

    Either ``scenario = <known name>`` alone, or a custom definition with
    ``name``, ``rated_speed_kph`` and ``segments`` given as a comma list of
    length:kappa_start:kappa_end triples.
    """
    cfg = parse_kv_file(path)
    if "scenario" in cfg:
        return scenario_spec(str(cfg["scenario"]))
    try:
        raw = cfg["segments"]
        if not isinstance(raw, list):
            raw = [raw]
        segments = []
        for item in raw:
            parts = item.split(":") if isinstance(item, str) else list(item)
            if len(parts) != 3:
                raise ValueError(f"segment {item!r} is not a length:k0:k1 triple")
            segments.append(tuple(float(p) for p in parts))
        return ScenarioSpec(str(cfg["name"]), float(cfg["rated_speed_kph"]), tuple(segments))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"bad scenario file {path}: {exc}") from exc


def build_scenario(spec: ScenarioSpec, spacing_m: float = SAMPLE_SPACING_M) -> RoadSection:
    """Sample a scenario's curvature program into a RoadSection.

    Heading integrates curvature with the trapezoid rule; positions integrate
    the heading the same way, which keeps consecutive samples within a
    fraction of a percent of the nominal arclength spacing.
    """
    total = spec.length_m
    n = int(round(total / spacing_m)) + 1
    s = np.arange(n) * spacing_m

    bounds = np.cumsum([0.0] + [seg[0] for seg in spec.segments])
    kappa = np.empty(n)
    seg_idx = np.clip(np.searchsorted(bounds, s, side="right") - 1, 0, len(spec.segments) - 1)
    for i, (length, k0, k1) in enumerate(spec.segments):
        mask = seg_idx == i
        local = (s[mask] - bounds[i]) / length
        kappa[mask] = k0 + (k1 - k0) * np.clip(local, 0.0, 1.0)

    heading = np.concatenate([[0.0], np.cumsum(0.5 * (kappa[1:] + kappa[:-1]) * spacing_m)])
    x = np.concatenate([[0.0], np.cumsum(0.5 * (np.cos(heading[1:]) + np.cos(heading[:-1])) * spacing_m)])
    y = np.concatenate([[0.0], np.cumsum(0.5 * (np.sin(heading[1:]) + np.sin(heading[:-1])) * spacing_m)])

    _, bank = _bank_profile(kappa, spec.rated_speed_kph)
    return RoadSection(
        section_id=spec.name,
        rated_speed_kph=spec.rated_speed_kph,
        s=s, kappa=kappa, bank=bank, heading=heading, x=x, y=y,
        friction_zone_splits=spec.friction_zone_splits,
    )
