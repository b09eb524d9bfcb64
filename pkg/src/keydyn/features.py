"""Unigraph, digraph and word-level typing features.

Per stream, every *unit* (a key, a key pair with one of four flight
definitions, a word) accumulates an occurrence list of millisecond values.
Occurrence lists are IQR-filtered and aggregated into a fixed-length vector
whose layout is fixed by a :class:`FeatureVocabulary` fitted on training
users only.
"""

from __future__ import annotations

import csv
import io
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyInput, EmptyTraining, MissingDevice, TooShort
from .ingest import DEVICES, Device, KeyEvent, Mode

AGGREGATES = ("mean", "median", "std")
WORD_STATS = ("mean", "std", "median")
FLIGHTS = (1, 2, 3, 4)

DEFAULT_CAPS = {"uni": 40, "di": 200, "word": 100}


class DeviceConfig(Enum):
    Desktop = "desktop"
    Phone = "phone"
    Tablet = "tablet"
    Combined = "combined"

    @property
    def devices(self) -> tuple[Device, ...]:
        if self is DeviceConfig.Combined:
            return DEVICES
        return (Device(self.value),)


# ---------------------------------------------------------------------------
# elementary statistics


def quantile_sorted(s: Sequence[float], p: float) -> float:
    """Linear-interpolation quantile of an ascending sequence at index (n-1)*p."""
    pos = (len(s) - 1) * p
    lo = int(math.floor(pos))
    frac = pos - lo
    if frac == 0.0 or lo + 1 >= len(s):
        return float(s[lo])
    return s[lo] + (s[lo + 1] - s[lo]) * frac


def quartiles(values: Sequence[float]) -> tuple[float, float]:
    s = sorted(values)
    return quantile_sorted(s, 0.25), quantile_sorted(s, 0.75)


def iqr_filter(values: Sequence[float], k: float = 1.5) -> list[float]:
    """Drop values outside [Q1 - k*IQR, Q3 + k*IQR], keeping input order.

    The fences are recomputed on the survivors until nothing more is removed,
    so the filter is idempotent.
    """
    if len(values) == 0:
        raise EmptyInput("iqr_filter needs at least one value")
    kept = list(values)
    while True:
        q1, q3 = quartiles(kept)
        spread = q3 - q1
        lo, hi = q1 - k * spread, q3 + k * spread
        survivors = [v for v in kept if lo <= v <= hi]
        if len(survivors) == len(kept):
            return kept
        kept = survivors


def mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def pstd(values: Sequence[float]) -> float:
    """Population standard deviation (divides by n).

    Integer-valued inputs (millisecond timings) get an exact variance that is
    rounded once, so the result does not depend on summation order.
    """
    n = len(values)
    if all(float(v).is_integer() for v in values):
        ints = [int(v) for v in values]
        s1 = sum(ints)
        s2 = sum(v * v for v in ints)
        return math.sqrt((n * s2 - s1 * s1) / (n * n))
    m = mean(values)
    return math.sqrt(math.fsum((v - m) ** 2 for v in values) / n)


def median(values: Sequence[float]) -> float:
    s = sorted(values)
    n = len(s)
    mid = n // 2
    if n % 2:
        return float(s[mid])
    return (s[mid - 1] + s[mid]) / 2.0


STATS = {"mean": mean, "std": pstd, "median": median}


# ---------------------------------------------------------------------------
# raw occurrence lists


def unigraph_holds(stream: Sequence[KeyEvent]) -> dict[str, list[float]]:
    holds: dict[str, list[float]] = defaultdict(list)
    for ev in stream:
        holds[ev.key_label].append(float(ev.release_time - ev.press_time))
    return dict(holds)


def flight_values(a: KeyEvent, b: KeyEvent) -> tuple[int, int, int, int]:
    """F1..F4 for consecutive keys ``a`` then ``b``."""
    return (
        b.press_time - a.release_time,
        b.release_time - a.release_time,
        b.press_time - a.press_time,
        b.release_time - a.press_time,
    )


def digraph_flights(stream: Sequence[KeyEvent]) -> dict[tuple[str, str, int], list[float]]:
    if len(stream) < 2:
        raise TooShort("digraphs need at least 2 events")
    out: dict[tuple[str, str, int], list[float]] = defaultdict(list)
    for a, b in zip(stream, stream[1:]):
        for idx, value in zip(FLIGHTS, flight_values(a, b)):
            out[(a.key_label, b.key_label, idx)].append(float(value))
    return dict(out)


@dataclass(frozen=True)
class WordInstance:
    text: str
    events: tuple[KeyEvent, ...]


def is_letter(key_label: str) -> bool:
    return len(key_label) == 1 and "a" <= key_label.lower() <= "z"


def segment_words(stream: Sequence[KeyEvent]) -> list[WordInstance]:
    """Maximal runs (length >= 2) of single-letter keys, split by any other key."""
    words = []
    run: list[KeyEvent] = []
    for ev in list(stream) + [None]:
        if ev is not None and is_letter(ev.key_label):
            run.append(ev)
            continue
        if len(run) >= 2:
            words.append(
                WordInstance("".join(e.key_label.lower() for e in run), tuple(run))
            )
        run = []
    return words


def word_hold_time(word: WordInstance) -> float:
    """Release of the last key minus press of the first key."""
    return float(word.events[-1].release_time - word.events[0].press_time)


def word_unigraph_stat(word: WordInstance, f: str) -> float:
    return STATS[f]([float(e.release_time - e.press_time) for e in word.events])


def word_digraph_stat(word: WordInstance, flight_index: int, f: str) -> float:
    values = [float(flight_values(a, b)[flight_index - 1]) for a, b in zip(word.events, word.events[1:])]
    return STATS[f](values)


# ---------------------------------------------------------------------------
# units and descriptors
#
# Unit ids are tuples:
#   ("uni", key)                      key hold
#   ("di", key1, key2, i)             flight Fi of a consecutive pair
#   ("word", w)                       word hold time W_N
#   ("wuni", w, f)                    per-instance f of the word's holds
#   ("wdi", w, i, f)                  per-instance f of the word's Fi values


def unit_name(unit: tuple) -> str:
    kind = unit[0]
    if kind == "uni":
        return f"uni:{unit[1]}"
    if kind == "di":
        return f"di:{unit[1]}+{unit[2]}:F{unit[3]}"
    if kind == "word":
        return f"word:{unit[1]}:WN"
    if kind == "wuni":
        return f"word:{unit[1]}:K_{unit[2]}"
    if kind == "wdi":
        return f"word:{unit[1]}:F{unit[2]}_{unit[3]}"
    raise ValueError(f"unknown unit {unit!r}")


def descriptor_name(unit: tuple, agg: str) -> str:
    if unit[0] in ("wuni", "wdi"):
        return unit_name(unit)
    return f"{unit_name(unit)}:{agg}"


def word_descriptors(word: str) -> list[tuple[tuple, str]]:
    desc = [(("word", word), agg) for agg in AGGREGATES]
    desc += [(("wuni", word, f), "mean") for f in WORD_STATS]
    desc += [(("wdi", word, i, f), "mean") for i in FLIGHTS for f in WORD_STATS]
    return desc


class StreamProfile:
    """All occurrence lists of one (user, device, mode) stream.

    Aggregates are computed lazily and memoised; the object only ever looks
    at its own stream.
    """

    def __init__(self, stream: Sequence[KeyEvent], k: float = 1.5):
        stream = tuple(stream)
        self.user_id = stream[0].user_id if stream else None
        self.device = stream[0].device if stream else None
        self.mode = stream[0].mode if stream else None
        self.n_events = len(stream)
        self.k = k
        self.series: dict[tuple, list[float]] = {}
        for key, vals in unigraph_holds(stream).items():
            self.series[("uni", key)] = vals
        if len(stream) >= 2:
            for (a, b, i), vals in digraph_flights(stream).items():
                self.series[("di", a, b, i)] = vals
        per_word: dict[str, list[WordInstance]] = defaultdict(list)
        for w in segment_words(stream):
            per_word[w.text].append(w)
        for text, instances in per_word.items():
            self.series[("word", text)] = [word_hold_time(w) for w in instances]
            for f in WORD_STATS:
                self.series[("wuni", text, f)] = [word_unigraph_stat(w, f) for w in instances]
            for i in FLIGHTS:
                for f in WORD_STATS:
                    self.series[("wdi", text, i, f)] = [word_digraph_stat(w, i, f) for w in instances]
        self._filtered: dict[tuple, list[float]] = {}
        self._agg: dict[tuple, float] = {}

    def count(self, unit: tuple) -> int:
        return len(self.series.get(unit, ()))

    def unit_counts(self) -> Counter:
        return Counter({u: len(v) for u, v in self.series.items() if u[0] in ("uni", "di", "word")})

    def filtered(self, unit: tuple) -> list[float] | None:
        if unit not in self.series:
            return None
        if unit not in self._filtered:
            self._filtered[unit] = iqr_filter(self.series[unit], self.k)
        return self._filtered[unit]

    def aggregate(self, unit: tuple, agg: str) -> float | None:
        key = (unit, agg)
        if key not in self._agg:
            vals = self.filtered(unit)
            self._agg[key] = None if vals is None else STATS[agg](vals)
        return self._agg[key]


def as_profile(stream) -> StreamProfile:
    return stream if isinstance(stream, StreamProfile) else StreamProfile(stream)


@dataclass(frozen=True)
class FeatureVocabulary:
    descriptors: tuple[tuple[tuple, str], ...]
    fitted_on: tuple[str, ...]
    frequency_floor: int = 1
    caps: Mapping[str, int] = field(default_factory=lambda: dict(DEFAULT_CAPS))

    def __len__(self) -> int:
        return len(self.descriptors)

    @property
    def names(self) -> list[str]:
        return [descriptor_name(u, a) for u, a in self.descriptors]


def _top_units(counts: Counter, kind: str, cap: int, floor: int) -> list[tuple]:
    units = [u for u, c in counts.items() if u[0] == kind and c >= floor]
    units.sort(key=lambda u: (-counts[u], unit_name(u)))
    return units[:cap]


def fit_vocabulary(training_streams: Iterable, caps: Mapping[str, int] | None = None,
                   frequency_floor: int = 1) -> FeatureVocabulary:
    """Choose the most frequent units over the training streams.

    Each selected key and digraph unit yields mean/median/std descriptors;
    each selected word yields 18 (W_N mean/median/std plus the 15 per-instance
    word statistics averaged over instances).
    """
    caps = {**DEFAULT_CAPS, **(caps or {})}
    profiles = [as_profile(s) for s in training_streams]
    if not profiles:
        raise EmptyTraining("no training streams")
    counts: Counter = Counter()
    users = []
    for p in profiles:
        counts.update(p.unit_counts())
        if p.user_id is not None and p.user_id not in users:
            users.append(p.user_id)
    if not counts:
        raise EmptyTraining("training streams contain no units")
    desc: list[tuple[tuple, str]] = []
    for u in _top_units(counts, "uni", caps["uni"], frequency_floor):
        desc += [(u, agg) for agg in AGGREGATES]
    for u in _top_units(counts, "di", caps["di"], frequency_floor):
        desc += [(u, agg) for agg in AGGREGATES]
    for u in _top_units(counts, "word", caps["word"], frequency_floor):
        desc += word_descriptors(u[1])
    return FeatureVocabulary(tuple(desc), tuple(sorted(users)), frequency_floor, caps)


@dataclass(frozen=True)
class FeatureVector:
    user_id: str | None
    device_config: DeviceConfig
    mode: Mode | None
    values: np.ndarray
    missing_mask: np.ndarray

    def __post_init__(self):
        if len(self.values) != len(self.missing_mask):
            raise ValueError("values and mask lengths differ")


def vectorize(stream, vocab: FeatureVocabulary) -> FeatureVector:
    """Aggregate a stream's occurrence lists in vocabulary order.

    Units absent from the stream are masked; their value slot holds NaN
    until imputation.
    """
    prof = as_profile(stream)
    values = np.empty(len(vocab.descriptors))
    mask = np.zeros(len(vocab.descriptors), dtype=bool)
    for j, (unit, agg) in enumerate(vocab.descriptors):
        v = prof.aggregate(unit, agg)
        if v is None:
            values[j] = np.nan
            mask[j] = True
        else:
            values[j] = v
    cfg = DeviceConfig(prof.device.value) if prof.device is not None else None
    return FeatureVector(prof.user_id, cfg, prof.mode, values, mask)


def combine_devices(per_device: Mapping[Device, FeatureVector]) -> FeatureVector:
    """Concatenate Desktop | Phone | Tablet vectors of one user."""
    for d in DEVICES:
        if d not in per_device:
            raise MissingDevice(d)
    parts = [per_device[d] for d in DEVICES]
    return FeatureVector(
        parts[0].user_id,
        DeviceConfig.Combined,
        parts[0].mode,
        np.concatenate([p.values for p in parts]),
        np.concatenate([p.missing_mask for p in parts]),
    )


def combined_names(vocabs: Mapping[Device, FeatureVocabulary]) -> list[str]:
    return [f"{d.value}|{n}" for d in DEVICES for n in vocabs[d].names]


def write_feature_csv(user_ids: Sequence[str], names: Sequence[str], matrix: np.ndarray,
                      mask: np.ndarray) -> tuple[str, str]:
    """Render the feature matrix and its 0/1 mask as two CSV documents."""
    fbuf, mbuf = io.StringIO(), io.StringIO()
    fw = csv.writer(fbuf, lineterminator="\n")
    mw = csv.writer(mbuf, lineterminator="\n")
    fw.writerow(["user_id", *names])
    mw.writerow(["user_id", *names])
    for uid, row, mrow in zip(user_ids, matrix, mask):
        fw.writerow([uid, *(repr(float(v)) for v in row)])
        mw.writerow([uid, *(int(m) for m in mrow)])
    return fbuf.getvalue(), mbuf.getvalue()


def read_feature_csv(text: str) -> tuple[list[str], list[str], np.ndarray]:
    rows = list(csv.reader(io.StringIO(text)))
    names = rows[0][1:]
    users = [r[0] for r in rows[1:]]
    matrix = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=float)
    return users, names, matrix.reshape(len(users), len(names))
