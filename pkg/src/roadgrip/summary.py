"""Bag-of-samples statistics over state traces and feature assembly.

A traversal's time series are compressed into order-free summaries: eleven
statistics per signal, five signals per run, plus an optional road-geometry
block (section length, curvature profile stats, difficulty index stats).
Feature names and order are fixed so corpus columns, trained models, and
selected subsets stay mutually consistent.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .observer import VehicleStateTrace
from .road import RoadSection, rdi_profile

STAT_NAMES = ("mean", "std", "q20", "q40", "q60", "q80", "min", "median",
              "max", "skewness", "kurtosis")
SIGNAL_ORDER = ("steer", "sideslip", "sideslip_rate", "yaw_excess", "speed")
ROAD_SIGNALS = ("road_curvature", "road_rdi")

ABLATIONS = ("full", "no_road", "no_sideslip", "no_speed", "sfs_subset")


@dataclass(frozen=True)
class StatRecord:
    """Eleven order-free statistics of one scalar series."""

    mean: float
    std: float
    q20: float
    q40: float
    q60: float
    q80: float
    min: float
    median: float
    max: float
    skewness: float
    kurtosis: float

    def __post_init__(self):
        vals = self.as_tuple()
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("non-finite statistic")
        if self.std < 0:
            raise ValueError("negative standard deviation")
        chain = (self.min, self.q20, self.q40, self.median, self.q60, self.q80, self.max)
        if any(a > b + 1e-9 * max(1.0, abs(a)) for a, b in zip(chain, chain[1:])):
            raise ValueError("quantile ordering violated")

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, f.name) for f in fields(self))


def summarize_signal(series) -> StatRecord:
    """StatRecord of a series: linear-interpolation quantiles, n-1 std,
    standardized-moment skewness, excess kurtosis (0 for degenerate series)."""
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or len(x) < 2:
        raise ValueError("need a 1-d series of at least 2 samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite samples")
    q20, q40, q60, q80 = np.quantile(x, [0.2, 0.4, 0.6, 0.8], method="linear")
    mean = float(x.mean())
    std = float(x.std(ddof=1))
    centered = x - mean
    m2 = float(np.mean(centered**2))
    if m2 > 0:
        # standardize first so powers of tiny/huge spreads cannot under- or
        # overflow
        z = centered / np.sqrt(m2)
        skew = float(np.mean(z**3))
        kurt = float(np.mean(z**4) - 3.0)
    else:
        skew = 0.0
        kurt = 0.0
    return StatRecord(
        mean=mean, std=std, q20=float(q20), q40=float(q40), q60=float(q60),
        q80=float(q80), min=float(x.min()), median=float(np.median(x)),
        max=float(x.max()), skewness=skew, kurtosis=kurt)


@dataclass(frozen=True)
class KinematicSummary:
    """One StatRecord per summarized signal, in fixed order."""

    steer: StatRecord
    sideslip: StatRecord
    sideslip_rate: StatRecord
    yaw_excess: StatRecord
    speed: StatRecord

    def records(self) -> tuple[tuple[str, StatRecord], ...]:
        return tuple((name, getattr(self, name)) for name in SIGNAL_ORDER)


def build_summary(trace: VehicleStateTrace) -> KinematicSummary:
    """Summarize an unflagged trace. Time order is discarded, so a trace and
    its reversal produce the same summary."""
    if trace.flagged:
        raise ValueError(f"run {trace.run_id} is flagged; refusing to summarize")
    return KinematicSummary(
        steer=summarize_signal(trace.steer),
        sideslip=summarize_signal(trace.sideslip),
        sideslip_rate=summarize_signal(trace.sideslip_rate),
        yaw_excess=summarize_signal(trace.yaw_excess),
        speed=summarize_signal(trace.speed))


@dataclass(frozen=True)
class RoadBlock:
    """Geometry features of a section: length plus profile statistics."""

    length_m: float
    curvature: StatRecord
    rdi: StatRecord


def build_road_block(section: RoadSection) -> RoadBlock:
    return RoadBlock(
        length_m=section.length_m,
        curvature=summarize_signal(section.kappa),
        rdi=summarize_signal(rdi_profile(section).values))


def kinematic_feature_names(drop=()) -> tuple[str, ...]:
    names = []
    for signal in SIGNAL_ORDER:
        if signal in drop:
            continue
        names.extend(f"{signal}_{stat}" for stat in STAT_NAMES)
    return tuple(names)


def road_feature_names() -> tuple[str, ...]:
    names = ["road_length"]
    for signal in ROAD_SIGNALS:
        names.extend(f"{signal}_{stat}" for stat in STAT_NAMES)
    return tuple(names)


FULL_FEATURE_NAMES = kinematic_feature_names() + road_feature_names()


@dataclass(frozen=True)
class FeatureVector:
    """Named, ordered feature values for one run."""

    names: tuple[str, ...]
    values: np.ndarray
    ablation: str

    def __post_init__(self):
        if len(self.names) != len(self.values):
            raise ValueError("names/values length mismatch")
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate feature names")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite feature value")
        self.values.setflags(write=False)

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.values)}

    def __len__(self) -> int:
        return len(self.names)


def _full_value_map(ks: KinematicSummary, road: RoadBlock | None) -> dict[str, float]:
    out = {}
    for signal, record in ks.records():
        for stat, value in zip(STAT_NAMES, record.as_tuple()):
            out[f"{signal}_{stat}"] = value
    if road is not None:
        out["road_length"] = road.length_m
        for signal, record in (("road_curvature", road.curvature), ("road_rdi", road.rdi)):
            for stat, value in zip(STAT_NAMES, record.as_tuple()):
                out[f"{signal}_{stat}"] = value
    return out


def assemble_features(ks: KinematicSummary, road: RoadBlock | None = None,
                      ablation: str = "full",
                      sfs_subset=None) -> FeatureVector:
    """Ordered feature vector for one run under the chosen ablation.

    Ablations drop whole signal blocks: no_road drops the geometry block,
    no_sideslip drops sideslip and sideslip_rate, no_speed drops speed.
    sfs_subset keeps exactly the named features, in the given order.
    """
    if ablation not in ABLATIONS:
        raise ValueError(f"unknown ablation {ablation!r}")
    if ablation == "sfs_subset":
        if not sfs_subset:
            raise ValueError("sfs_subset ablation needs a non-empty name list")
        names = tuple(sfs_subset)
        unknown = set(names) - set(FULL_FEATURE_NAMES)
        if unknown:
            raise ValueError(f"unknown feature names: {sorted(unknown)}")
        if len(set(names)) != len(names):
            raise ValueError("duplicate names in sfs subset")
    else:
        if sfs_subset is not None:
            raise ValueError("sfs_subset list only valid with the sfs_subset ablation")
        drop = {"no_sideslip": ("sideslip", "sideslip_rate"),
                "no_speed": ("speed",)}.get(ablation, ())
        names = kinematic_feature_names(drop)
        if ablation != "no_road":
            names = names + road_feature_names()
    value_map = _full_value_map(ks, road)
    missing = [n for n in names if n not in value_map]
    if missing:
        raise ValueError(f"road block required for features: {missing[:3]}")
    values = np.array([value_map[n] for n in names])
    return FeatureVector(names=names, values=values, ablation=ablation)


def trace_features(trace: VehicleStateTrace, section: RoadSection | None = None,
                   ablation: str = "full", sfs_subset=None) -> FeatureVector:
    """Convenience: summary + road block + assembly in one step."""
    road = build_road_block(section) if section is not None else None
    return assemble_features(build_summary(trace), road, ablation, sfs_subset)
