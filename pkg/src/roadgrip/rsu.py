"""Wire messages, a lossy-link model, and the roadside consensus station.

Messages use a fixed little-endian layout with a version byte first: a
16-byte header (version u8, type u8, count u16, section code u32, report id
u64) followed by float32 payload fields. A vehicle report is a single
256-byte packet; a speed advisory with the decimated section map stays well
inside an eight-packet budget. Section names never travel on the wire, only
their CRC32 codes; reports carry a random 64-bit id and nothing that
identifies the vehicle.
"""

from __future__ import annotations

import json
import secrets
import struct
import threading
import time
import zlib
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .learn import GbtModel
from .observer import VehicleStateTrace
from .road import RoadSection
from .summary import (
    RoadBlock,
    STAT_NAMES,
    build_road_block,
    build_summary,
    kinematic_feature_names,
    road_feature_names,
)

WIRE_VERSION = 1
MSG_VEHICLE_REPORT = 1
MSG_ADVISORY = 2

_HEADER = struct.Struct("<BBHIQ")
N_SUMMARY_VALUES = 55
N_SPEED_QUANTILES = 5
REPORT_WIRE_BYTES = _HEADER.size + 4 * (N_SPEED_QUANTILES + N_SUMMARY_VALUES)
MAX_MAP_SAMPLES = 64
PACKET_BYTES = 1200
ADVISORY_PACKET_BUDGET = 8 * PACKET_BYTES

DEFAULT_WINDOW_S = 3600.0
DEFAULT_MIN_BATCH = 50
DEFAULT_CAPACITY = 10_000

SPEED_QUANTILE_LEVELS = (0.2, 0.4, 0.5, 0.6, 0.8)


class WireError(ValueError):
    """Raised for malformed, truncated, or oversized wire payloads."""


class IngestError(ValueError):
    """Raised when a station cannot accept a report."""


def section_code(name: str) -> int:
    return zlib.crc32(name.encode("utf-8")) & 0xFFFFFFFF


def _f32(values, n, what) -> np.ndarray:
    out = np.asarray(values, dtype="<f4")
    if out.shape != (n,):
        raise ValueError(f"{what} must have exactly {n} values")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"non-finite {what}")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class VehicleReportMsg:
    """One traversal's anonymous upload: speed quantiles plus the 55-value
    kinematic summary, all float32."""

    section_code: int
    report_id: int
    speed_quantiles: np.ndarray
    summary_values: np.ndarray

    def __post_init__(self):
        if not 0 <= self.section_code < 2**32:
            raise ValueError("section code must fit u32")
        if not 0 <= self.report_id < 2**64:
            raise ValueError("report id must fit u64")
        object.__setattr__(self, "speed_quantiles",
                           _f32(self.speed_quantiles, N_SPEED_QUANTILES, "speed quantiles"))
        object.__setattr__(self, "summary_values",
                           _f32(self.summary_values, N_SUMMARY_VALUES, "summary values"))

    def encode(self) -> bytes:
        head = _HEADER.pack(WIRE_VERSION, MSG_VEHICLE_REPORT, N_SUMMARY_VALUES,
                            self.section_code, self.report_id)
        return head + self.speed_quantiles.tobytes() + self.summary_values.tobytes()


@dataclass(frozen=True)
class RsuAdvisoryMsg:
    """Downlink advisory: speeds plus a decimated (s, kappa, bank) map."""

    section_code: int
    rated_speed_kph: float
    advisory_speed_kph: float
    section_length_m: float
    map_samples: np.ndarray

    def __post_init__(self):
        if not 0 <= self.section_code < 2**32:
            raise ValueError("section code must fit u32")
        samples = np.asarray(self.map_samples, dtype="<f4")
        if samples.ndim != 2 or samples.shape[1] != 3:
            raise ValueError("map samples must be (n, 3): s, kappa, bank")
        if not 1 <= len(samples) <= MAX_MAP_SAMPLES:
            raise ValueError(f"map sample count must be in [1, {MAX_MAP_SAMPLES}]")
        if not np.all(np.isfinite(samples)):
            raise ValueError("non-finite map samples")
        samples.setflags(write=False)
        object.__setattr__(self, "map_samples", samples)
        scalars = (self.rated_speed_kph, self.advisory_speed_kph, self.section_length_m)
        if not all(np.isfinite(v) and v > 0 for v in scalars):
            raise ValueError("speeds and length must be positive and finite")

    def encode(self) -> bytes:
        head = _HEADER.pack(WIRE_VERSION, MSG_ADVISORY, len(self.map_samples),
                            self.section_code, 0)
        scalars = np.array(
            [self.rated_speed_kph, self.advisory_speed_kph, self.section_length_m],
            dtype="<f4")
        return head + scalars.tobytes() + self.map_samples.tobytes()


def decode_message(data: bytes):
    """Parse a wire payload into its message object.

    Rejects bad versions, unknown types, truncation, trailing bytes, and
    non-finite floats rather than returning garbage.
    """
    if len(data) < _HEADER.size:
        raise WireError("truncated header")
    version, msg_type, count, code, report_id = _HEADER.unpack_from(data)
    if version != WIRE_VERSION:
        raise WireError(f"unsupported wire version {version}")
    body = data[_HEADER.size:]
    if msg_type == MSG_VEHICLE_REPORT:
        if count != N_SUMMARY_VALUES:
            raise WireError(f"report carries {count} summary values, expected {N_SUMMARY_VALUES}")
        expect = 4 * (N_SPEED_QUANTILES + N_SUMMARY_VALUES)
        if len(body) != expect:
            raise WireError(f"report body is {len(body)} bytes, expected {expect}")
        floats = np.frombuffer(body, dtype="<f4")
        if not np.all(np.isfinite(floats)):
            raise WireError("non-finite report payload")
        return VehicleReportMsg(
            section_code=code, report_id=report_id,
            speed_quantiles=floats[:N_SPEED_QUANTILES].copy(),
            summary_values=floats[N_SPEED_QUANTILES:].copy())
    if msg_type == MSG_ADVISORY:
        if not 1 <= count <= MAX_MAP_SAMPLES:
            raise WireError(f"advisory map count {count} outside [1, {MAX_MAP_SAMPLES}]")
        expect = 4 * (3 + 3 * count)
        if len(body) != expect:
            raise WireError(f"advisory body is {len(body)} bytes, expected {expect}")
        floats = np.frombuffer(body, dtype="<f4")
        if not np.all(np.isfinite(floats)):
            raise WireError("non-finite advisory payload")
        return RsuAdvisoryMsg(
            section_code=code,
            rated_speed_kph=float(floats[0]),
            advisory_speed_kph=float(floats[1]),
            section_length_m=float(floats[2]),
            map_samples=floats[3:].reshape(count, 3).copy())
    raise WireError(f"unknown message type {msg_type}")


def vehicle_report(trace: VehicleStateTrace, section_name: str,
                   report_id: int | None = None) -> VehicleReportMsg:
    """Build the uplink report for one finished traversal.

    Flagged traces are refused upstream by build_summary. The summary block
    is laid out in canonical kinematic feature order so the station can
    rebuild named features; the report id defaults to a fresh random 64-bit
    value for anonymity.
    """
    ks = build_summary(trace)
    values = []
    for _, record in ks.records():
        values.extend(record.as_tuple())
    quantiles = np.quantile(np.asarray(trace.speed, dtype=float),
                            SPEED_QUANTILE_LEVELS)
    if report_id is None:
        report_id = secrets.randbits(64)
    return VehicleReportMsg(
        section_code=section_code(section_name), report_id=report_id,
        speed_quantiles=quantiles, summary_values=np.array(values))


def advisory_speed_kph(rated_speed_kph: float, interval: "FrictionInterval | None") -> float:
    """Advisory from the current consensus: lateral capacity scales with mu,
    so speed scales with its square root; never above the rated speed."""
    if interval is None:
        return float(rated_speed_kph)
    return float(rated_speed_kph * min(1.0, np.sqrt(interval.upper)))


def advisory_for(section: RoadSection, advisory_kph: float | None = None,
                 n_samples: int = MAX_MAP_SAMPLES) -> RsuAdvisoryMsg:
    """Downlink message for a section, with the geometry decimated to at
    most n_samples (s, kappa, bank) triples."""
    picks = np.unique(np.linspace(0, len(section.s) - 1, n_samples).astype(int))
    samples = np.column_stack([section.s[picks], section.kappa[picks],
                               section.bank[picks]])
    return RsuAdvisoryMsg(
        section_code=section_code(section.section_id),
        rated_speed_kph=section.rated_speed_kph,
        advisory_speed_kph=(section.rated_speed_kph if advisory_kph is None
                            else advisory_kph),
        section_length_m=section.length_m,
        map_samples=samples)


@dataclass(frozen=True)
class Delivery:
    delivered: bool
    latency_ms: float
    payload: bytes | None


@dataclass
class LinkModel:
    """Bernoulli packet loss plus fixed latency with uniform jitter.

    Deterministic per seed: each transmit draws the loss coin and the jitter
    in a fixed order whether or not the packet survives.
    """

    p_loss: float = 0.0
    latency_ms: float = 20.0
    jitter_ms: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_loss < 1.0:
            raise ValueError("p_loss must be in [0, 1)")
        if self.latency_ms < 0 or self.jitter_ms < 0:
            raise ValueError("latencies must be non-negative")
        self._rng = np.random.default_rng(self.seed)

    def transmit(self, payload: bytes) -> Delivery:
        dropped = self._rng.random() < self.p_loss
        latency = self.latency_ms + self._rng.uniform(0.0, self.jitter_ms)
        if dropped:
            return Delivery(delivered=False, latency_ms=float(latency), payload=None)
        return Delivery(delivered=True, latency_ms=float(latency), payload=payload)


@dataclass(frozen=True)
class FrictionInterval:
    """Published friction interval [0.8 mu_new, mu_new] with its midpoint."""

    lower: float
    upper: float
    midpoint: float
    batch_size: int

    def __post_init__(self):
        if self.lower != 0.8 * self.upper:
            raise ValueError("lower bound must equal 0.8 * upper")
        if self.midpoint != 0.5 * (self.lower + self.upper):
            raise ValueError("midpoint must be the interval centre")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")

    @classmethod
    def from_median(cls, median_estimate: float, batch_size: int) -> "FrictionInterval":
        # wear ~ U[0.8, 1] puts the median individual estimate at 0.9 mu_new
        mu_new = median_estimate / 0.9
        lower = 0.8 * mu_new
        return cls(lower=lower, upper=mu_new,
                   midpoint=0.5 * (lower + mu_new), batch_size=batch_size)


class ConsensusWindow:
    """Sliding one-hour window of timestamped individual estimates."""

    def __init__(self, window_s: float = DEFAULT_WINDOW_S,
                 capacity: int = DEFAULT_CAPACITY):
        if window_s <= 0 or capacity < 1:
            raise ValueError("window duration and capacity must be positive")
        self.window_s = float(window_s)
        self.capacity = int(capacity)
        self._entries: deque[tuple[float, float]] = deque()

    def __len__(self) -> int:
        return len(self._entries)

    def add(self, timestamp: float, estimate: float) -> None:
        if self._entries and timestamp < self._entries[-1][0]:
            raise ValueError("timestamps must be non-decreasing")
        self._entries.append((float(timestamp), float(estimate)))
        while len(self._entries) > self.capacity:
            self._entries.popleft()

    def evict(self, now: float) -> None:
        cutoff = now - self.window_s
        while self._entries and self._entries[0][0] < cutoff:
            self._entries.popleft()

    def estimates(self) -> np.ndarray:
        return np.array([e for _, e in self._entries])

    def entries(self) -> list[tuple[float, float]]:
        return list(self._entries)


def consensus(window: ConsensusWindow, now: float,
              min_batch: int = DEFAULT_MIN_BATCH) -> FrictionInterval | None:
    """Median consensus over the live window; None while under min_batch.

    The median of an even count is the mean of the two central values.
    """
    window.evict(now)
    if len(window) < min_batch:
        return None
    estimates = window.estimates()
    return FrictionInterval.from_median(float(np.median(estimates)), len(estimates))


class _SectionRecord:
    def __init__(self, section: RoadSection, window_s: float, capacity: int):
        self.section = section
        self.road_block = build_road_block(section)
        self.window = ConsensusWindow(window_s, capacity)
        self.seen_ids: dict[int, float] = {}

    def evict_ids(self, now: float, window_s: float) -> None:
        cutoff = now - window_s
        stale = [rid for rid, t in self.seen_ids.items() if t < cutoff]
        for rid in stale:
            del self.seen_ids[rid]


class RsuStation:
    """Roadside unit: ingests vehicle reports, runs the regressor, and
    maintains one consensus window per served section.

    All mutations take the station lock so concurrent ingest and consensus
    reads stay consistent.
    """

    def __init__(self, sections, model: GbtModel | None = None,
                 window_s: float = DEFAULT_WINDOW_S,
                 min_batch: int = DEFAULT_MIN_BATCH,
                 capacity: int = DEFAULT_CAPACITY,
                 clock=time.time):
        self.model = model
        self.window_s = float(window_s)
        self.min_batch = int(min_batch)
        self.clock = clock
        self._lock = threading.Lock()
        self._by_code: dict[int, _SectionRecord] = {}
        self._by_name: dict[str, _SectionRecord] = {}
        for section in sections:
            rec = _SectionRecord(section, window_s, capacity)
            self._by_code[section_code(section.section_id)] = rec
            self._by_name[section.section_id] = rec
        if not self._by_name:
            raise ValueError("station serves no sections")

    def section_names(self) -> tuple[str, ...]:
        return tuple(sorted(self._by_name))

    def section(self, name: str) -> RoadSection:
        return self._record(name).section

    def _record(self, name: str) -> _SectionRecord:
        try:
            return self._by_name[name]
        except KeyError:
            raise IngestError(f"unknown section {name!r}") from None

    def _features_for(self, rec: _SectionRecord, msg: VehicleReportMsg) -> np.ndarray:
        available = dict(zip(kinematic_feature_names(),
                             msg.summary_values.astype(float)))
        road = rec.road_block
        available["road_length"] = road.length_m
        for prefix, record in (("road_curvature", road.curvature),
                               ("road_rdi", road.rdi)):
            for stat, value in zip(STAT_NAMES, record.as_tuple()):
                available[f"{prefix}_{stat}"] = value
        missing = [n for n in self.model.feature_names if n not in available]
        if missing:
            raise IngestError(f"report cannot satisfy features: {missing[:3]}")
        return np.array([available[n] for n in self.model.feature_names])

    def ingest(self, data, now: float | None = None) -> float:
        """Accept one uplink payload (bytes or decoded report) and return the
        individual friction estimate appended to the window."""
        msg = decode_message(data) if isinstance(data, (bytes, bytearray)) else data
        if not isinstance(msg, VehicleReportMsg):
            raise IngestError("expected a vehicle report")
        if self.model is None:
            raise IngestError("no regressor loaded")
        with self._lock:
            # take the clock under the lock so concurrent arrivals cannot
            # append out of timestamp order
            now = self.clock() if now is None else float(now)
            rec = self._by_code.get(msg.section_code)
            if rec is None:
                raise IngestError(f"unknown section code {msg.section_code}")
            rec.evict_ids(now, self.window_s)
            if msg.report_id in rec.seen_ids:
                raise IngestError(f"duplicate report id {msg.report_id}")
            features = self._features_for(rec, msg)
            estimate = float(self.model.predict(features))
            rec.seen_ids[msg.report_id] = now
            rec.window.add(now, estimate)
            return estimate

    def consensus_for(self, name: str, now: float | None = None) -> FrictionInterval | None:
        with self._lock:
            now = self.clock() if now is None else float(now)
            rec = self._record(name)
            return consensus(rec.window, now, self.min_batch)

    def advisory(self, name: str, now: float | None = None) -> RsuAdvisoryMsg:
        with self._lock:
            now = self.clock() if now is None else float(now)
            rec = self._record(name)
            interval = consensus(rec.window, now, self.min_batch)
            speed = advisory_speed_kph(rec.section.rated_speed_kph, interval)
            return advisory_for(rec.section, advisory_kph=speed)

    def state_dict(self, now: float | None = None) -> dict:
        """Snapshot of every window and interval, JSON-ready."""
        out = {}
        with self._lock:
            now = self.clock() if now is None else float(now)
            for name in sorted(self._by_name):
                rec = self._by_name[name]
                interval = consensus(rec.window, now, self.min_batch)
                out[name] = {
                    "n_estimates": len(rec.window),
                    "window": [[t, mu] for t, mu in rec.window.entries()],
                    "interval": None if interval is None else {
                        "lower": interval.lower,
                        "upper": interval.upper,
                        "midpoint": interval.midpoint,
                        "batch_size": interval.batch_size,
                    },
                }
        return {"min_batch": self.min_batch, "window_s": self.window_s,
                "sections": out}

    def state_json(self, now: float | None = None) -> str:
        return json.dumps(self.state_dict(now), sort_keys=True)
