"""Parsing, validation and indexing of keystroke event logs and label files.

Event files carry one row per keystroke with both timestamps::

    user_id,device,mode,key,press_ms,release_ms
    u1,desktop,free,a,100,180

Label files carry one row per user::

    user_id,gender,major,style,age,height
    u1,male,cs,c,24,67
"""

from __future__ import annotations

import csv
import io
import logging
import os
import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Mapping, Union

from .errors import DuplicateUser, EmptyDataset, InvalidEnum, MalformedRow

log = logging.getLogger(__name__)

EVENT_HEADER = ["user_id", "device", "mode", "key", "press_ms", "release_ms"]
LABEL_HEADER = ["user_id", "gender", "major", "style", "age", "height"]
RAW_HEADER = ["user_id", "device", "mode", "key", "direction", "time_ms"]

DATA_DIR_ENV = "KEYDYN_DATA_DIR"

AGE_RANGE = (10, 100)
HEIGHT_RANGE = (36, 90)

Source = Union[bytes, str, os.PathLike, IO]


class Device(Enum):
    Desktop = "desktop"
    Phone = "phone"
    Tablet = "tablet"


class Mode(Enum):
    Free = "free"
    Fixed = "fixed"


class Gender(Enum):
    Male = "male"
    Female = "female"


class Major(Enum):
    CS = "cs"
    NonCS = "noncs"


class Style(Enum):
    A_MustLook = "a"
    B_OccasionalLook = "b"
    C_NoLook = "c"


DEVICES = (Device.Desktop, Device.Phone, Device.Tablet)
MODES = (Mode.Free, Mode.Fixed)


@dataclass(frozen=True, slots=True)
class KeyEvent:
    user_id: str
    device: Device
    mode: Mode
    key_label: str
    press_time: int
    release_time: int

    @property
    def hold(self) -> int:
        return self.release_time - self.press_time


@dataclass(frozen=True, slots=True)
class SoftLabels:
    gender: Gender
    major: Major
    typing_style: Style
    age: int
    height: int

    def __post_init__(self):
        if not AGE_RANGE[0] <= self.age <= AGE_RANGE[1]:
            raise ValueError(f"age {self.age} outside {AGE_RANGE}")
        if not HEIGHT_RANGE[0] <= self.height <= HEIGHT_RANGE[1]:
            raise ValueError(f"height {self.height} outside {HEIGHT_RANGE}")


StreamKey = tuple  # (user_id, Device, Mode)


@dataclass(frozen=True)
class BuildReport:
    events_in: int
    events_kept: int
    events_dropped: int
    users_in: int
    users_kept: int
    users_dropped: tuple[str, ...]


@dataclass(frozen=True)
class Dataset:
    streams: Mapping[StreamKey, tuple[KeyEvent, ...]]
    labels: Mapping[str, SoftLabels]
    report: BuildReport | None = field(default=None, compare=False)

    @property
    def users(self) -> list[str]:
        return sorted(self.labels)

    def stream(self, user_id: str, device: Device, mode: Mode) -> tuple[KeyEvent, ...]:
        return self.streams.get((user_id, device, mode), ())

    def events(self) -> list[KeyEvent]:
        return [ev for key in sorted(self.streams, key=_stream_sort_key) for ev in self.streams[key]]


class LabelTable(dict):
    """``user_id -> SoftLabels`` mapping that also remembers skipped rows."""

    def __init__(self, *args, skipped: Iterable[str] = (), **kwargs):
        super().__init__(*args, **kwargs)
        self.skipped = list(skipped)


def _stream_sort_key(key):
    user, device, mode = key
    return (user, DEVICES.index(device), MODES.index(mode))


def _read_text(source: Source) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, (str, os.PathLike)):
        return Path(source).read_text(encoding="utf-8")
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def _rows(text: str):
    reader = csv.reader(io.StringIO(text))
    for line_no, row in enumerate(reader, start=1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        yield line_no, [c.strip() for c in row]


def _enum(enum_cls, value: str, line_no: int):
    try:
        return enum_cls(value.lower())
    except ValueError:
        raise InvalidEnum(line_no, value) from None


def _int(value: str, line_no: int, what: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise MalformedRow(line_no, f"non-integer {what} {value!r}") from None


def parse_events(source: Source) -> list[KeyEvent]:
    """Parse an ``events.csv`` document into key events, in file order."""
    events = []
    rows = _rows(_read_text(source))
    for line_no, row in rows:
        if line_no == 1:
            if row != EVENT_HEADER:
                raise MalformedRow(line_no, "unexpected header")
            continue
        if len(row) != len(EVENT_HEADER):
            raise MalformedRow(line_no, f"expected {len(EVENT_HEADER)} columns, got {len(row)}")
        user, device, mode, key, press, release = row
        if not user or not key:
            raise MalformedRow(line_no, "empty user_id or key")
        events.append(
            KeyEvent(
                user_id=user,
                device=_enum(Device, device, line_no),
                mode=_enum(Mode, mode, line_no),
                key_label=key,
                press_time=_int(press, line_no, "press_ms"),
                release_time=_int(release, line_no, "release_ms"),
            )
        )
    return events


def parse_labels(source: Source) -> LabelTable:
    """Parse a ``labels.csv`` document.

    Rows with a blank target field are skipped; their user ids are listed in
    ``result.skipped``. A user id appearing twice raises DuplicateUser.
    """
    labels = LabelTable()
    seen: set[str] = set()
    for line_no, row in _rows(_read_text(source)):
        if line_no == 1:
            if row != LABEL_HEADER:
                raise MalformedRow(line_no, "unexpected header")
            continue
        if len(row) != len(LABEL_HEADER):
            raise MalformedRow(line_no, f"expected {len(LABEL_HEADER)} columns, got {len(row)}")
        user = row[0]
        if not user:
            raise MalformedRow(line_no, "empty user_id")
        if user in seen:
            raise DuplicateUser(user)
        seen.add(user)
        if any(not c for c in row[1:]):
            labels.skipped.append(user)
            log.warning("labels: user %s skipped (missing field at line %d)", user, line_no)
            continue
        age = _int(row[4], line_no, "age")
        height = _int(row[5], line_no, "height")
        try:
            labels[user] = SoftLabels(
                gender=_enum(Gender, row[1], line_no),
                major=_enum(Major, row[2], line_no),
                typing_style=_enum(Style, row[3], line_no),
                age=age,
                height=height,
            )
        except ValueError as exc:
            raise MalformedRow(line_no, str(exc)) from None
    return labels


def format_events(events: Iterable[KeyEvent]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(EVENT_HEADER)
    for ev in events:
        writer.writerow(
            [ev.user_id, ev.device.value, ev.mode.value, ev.key_label, ev.press_time, ev.release_time]
        )
    return buf.getvalue()


def format_labels(labels: Mapping[str, SoftLabels]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LABEL_HEADER)
    for user, lab in labels.items():
        writer.writerow(
            [user, lab.gender.value, lab.major.value, lab.typing_style.value, lab.age, lab.height]
        )
    return buf.getvalue()


def build_dataset(events: Iterable[KeyEvent], labels: Mapping[str, SoftLabels]) -> Dataset:
    """Group events per (user, device, mode) session and enforce invariants.

    Events whose release precedes their press are dropped; users without a
    label row are dropped. Streams are stably sorted by press time.
    """
    grouped: dict[StreamKey, list[KeyEvent]] = defaultdict(list)
    n_in = n_bad = 0
    users_seen: list[str] = []
    seen_set: set[str] = set()
    for ev in events:
        n_in += 1
        if ev.user_id not in seen_set:
            seen_set.add(ev.user_id)
            users_seen.append(ev.user_id)
        if ev.release_time < ev.press_time:
            n_bad += 1
            continue
        grouped[(ev.user_id, ev.device, ev.mode)].append(ev)

    dropped_users = sorted(u for u in users_seen if u not in labels)
    if dropped_users:
        log.warning("dropping %d user(s) without labels: %s", len(dropped_users), ", ".join(dropped_users))
    if n_bad:
        log.warning("dropped %d event(s) with release before press", n_bad)

    streams = {}
    n_unlabelled = 0
    for key in sorted(grouped, key=_stream_sort_key):
        evs = grouped[key]
        if key[0] not in labels:
            n_unlabelled += len(evs)
            continue
        streams[key] = tuple(sorted(evs, key=lambda e: e.press_time))
    if not streams:
        raise EmptyDataset("no stream survived validation")
    kept_users = sorted({k[0] for k in streams})
    n_kept = sum(len(s) for s in streams.values())
    report = BuildReport(
        events_in=n_in,
        events_kept=n_kept,
        events_dropped=n_in - n_kept,
        users_in=len(users_seen),
        users_kept=len(kept_users),
        users_dropped=tuple(dropped_users),
    )
    return Dataset(streams=streams, labels={u: labels[u] for u in kept_users}, report=report)


def load_dataset(data_dir: str | os.PathLike) -> Dataset:
    data_dir = Path(data_dir)
    events_path = data_dir / "events.csv"
    labels_path = data_dir / "labels.csv"
    for p in (events_path, labels_path):
        if not p.is_file():
            raise FileNotFoundError(p)
    return build_dataset(parse_events(events_path), parse_labels(labels_path))


def resolve_data_dir(flag: str | None) -> Path | None:
    if flag:
        return Path(flag)
    env = os.environ.get(DATA_DIR_ENV)
    return Path(env) if env else None


def _describe(values: list[float]) -> dict:
    return {
        "min": min(values),
        "max": max(values),
        "mean": statistics.fmean(values),
        "median": statistics.median(values),
        "std": statistics.pstdev(values),
    }


def dataset_summary(ds: Dataset) -> dict:
    """Per-class label counts, age/height statistics and keystroke counts."""
    labs = list(ds.labels.values())
    keystrokes: dict[str, int] = {}
    for device in DEVICES:
        for mode in MODES:
            n = sum(len(s) for (u, d, m), s in ds.streams.items() if d is device and m is mode)
            keystrokes[f"{device.value}/{mode.value}"] = n
    return {
        "n_users": len(labs),
        "gender": {g.value: sum(l.gender is g for l in labs) for g in Gender},
        "major": {m.value: sum(l.major is m for l in labs) for m in Major},
        "style": {s.value: sum(l.typing_style is s for l in labs) for s in Style},
        "age": _describe([l.age for l in labs]),
        "height": _describe([l.height for l in labs]),
        "keystrokes": keystrokes,
        "keystrokes_total": sum(keystrokes.values()),
    }


def pair_press_release(rows: Iterable[tuple]) -> tuple[list[KeyEvent], int]:
    """Convert separate press/release rows into one-row-per-keystroke events.

    ``rows`` yields ``(user_id, device, mode, key, direction, time_ms)`` with
    direction "press" or "release". Each press is paired with the next release
    of the same key in the same session. Returns the events (ordered by press
    time per session) and the number of unpaired presses dropped.
    """
    by_session: dict[StreamKey, list] = defaultdict(list)
    for i, (user, device, mode, key, direction, t) in enumerate(rows):
        by_session[(user, device, mode)].append((int(t), i, key, direction))
    events = []
    unpaired = 0
    for (user, device, mode), items in by_session.items():
        items.sort()
        open_presses: dict[str, list[int]] = defaultdict(list)
        for t, _, key, direction in items:
            if direction == "press":
                open_presses[key].append(t)
            elif open_presses[key]:
                press = open_presses[key].pop(0)
                events.append(KeyEvent(user, device, mode, key, press, t))
        unpaired += sum(len(v) for v in open_presses.values())
    events.sort(key=lambda e: (_stream_sort_key((e.user_id, e.device, e.mode)), e.press_time))
    return events, unpaired


def parse_raw_events(source: Source) -> tuple[list[KeyEvent], int]:
    """Parse a press/release log (``user_id,device,mode,key,direction,time_ms``)."""
    rows = []
    for line_no, row in _rows(_read_text(source)):
        if line_no == 1:
            if row != RAW_HEADER:
                raise MalformedRow(line_no, "unexpected header")
            continue
        if len(row) != len(RAW_HEADER):
            raise MalformedRow(line_no, f"expected {len(RAW_HEADER)} columns, got {len(row)}")
        user, device, mode, key, direction, t = row
        direction = direction.lower()
        if direction in ("down", "keydown"):
            direction = "press"
        elif direction in ("up", "keyup"):
            direction = "release"
        if direction not in ("press", "release"):
            raise InvalidEnum(line_no, direction)
        rows.append(
            (user, _enum(Device, device, line_no), _enum(Mode, mode, line_no), key, direction,
             _int(t, line_no, "time_ms"))
        )
    return pair_press_release(rows)
