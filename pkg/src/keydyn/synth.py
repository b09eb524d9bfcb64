"""Persona-conditioned synthetic keystroke logs with planted label effects.

Hold and flight times are log-normal. A persona's log-means are its
individual baseline plus ``signal_strength`` times the summed log effect
multipliers of its labels (``GeneratorConfig.effects``). At signal 0 the
labels carry no information about timing.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ingest import (
    DEVICES,
    MODES,
    Dataset,
    Device,
    Gender,
    KeyEvent,
    Major,
    Mode,
    SoftLabels,
    Style,
    build_dataset,
    format_events,
    format_labels,
)

FIXED_SENTENCES = (
    "The quick brown fox jumps over the lazy dog.",
    "Pack my box with five dozen liquor jugs, then call the station.",
)

WORD_POOL = (
    "the", "and", "that", "have", "for", "not", "with", "you", "this", "but", "his", "from",
    "they", "say", "her", "she", "will", "one", "all", "would", "there", "their", "what",
    "out", "about", "who", "get", "which", "when", "make", "can", "like", "time", "just",
    "him", "know", "take", "people", "into", "year", "your", "good", "some", "could", "them",
    "see", "other", "than", "then", "now", "look", "only", "come", "its", "over", "think",
    "also", "back", "after", "use", "two", "how", "our", "work", "first", "well", "way",
    "even", "new", "want", "because", "any", "these", "give", "day", "most", "us", "study",
    "home", "class", "phone", "music", "friends", "weekend", "city", "family", "food",
)

# attribute -> label value -> (hold multiplier, flight multiplier) at signal 1
DEFAULT_EFFECTS = {
    "gender": {"male": (1.0, 1.0), "female": (1.25, 1.05)},
    "major": {"cs": (1.0, 1.0), "noncs": (1.08, 1.10)},
    "style": {"a": (1.10, 1.60), "b": (1.04, 1.35), "c": (1.0, 1.0)},
    # multipliers applied per year / inch away from the reference value
    "age_per_year": (1.01, 1.02),
    "height_per_inch": (1.01, 1.0),
}
AGE_REFERENCE = 25
HEIGHT_REFERENCE = 67

DEVICE_MULTIPLIER = {Device.Desktop: 1.0, Device.Phone: 1.3, Device.Tablet: 1.2}

DEFAULT_MARGINALS = {
    "gender": {"male": 72, "female": 45},
    "major": {"cs": 66, "noncs": 50},
    "style": {"a": 6, "b": 31, "c": 80},
    "age": {"mean": 24.97, "std": 3.11, "min": 19, "max": 35},
    "height": {"mean": 66.96, "std": 4.02, "min": 54, "max": 74},
}


@dataclass(frozen=True)
class GeneratorConfig:
    n_users: int = 117
    keystrokes_per_stream: int = 400
    signal_strength: float = 1.0
    seed: int = 0
    base_hold_ms: float = 95.0
    base_flight_ms: float = 110.0
    hold_sigma: float = 0.25
    flight_sigma: float = 0.40
    individual_hold_sd: float = 0.03
    individual_flight_sd: float = 0.04
    overlap_prob: float = 0.05
    effects: dict = field(default_factory=lambda: DEFAULT_EFFECTS)
    marginals: dict = field(default_factory=lambda: DEFAULT_MARGINALS)
    fixed_sentences: tuple = FIXED_SENTENCES
    word_pool: tuple = WORD_POOL

    def __post_init__(self):
        if self.n_users < 4:
            raise ValueError("n_users must be >= 4")
        if self.keystrokes_per_stream < 100:
            raise ValueError("keystrokes_per_stream must be >= 100")
        if self.signal_strength < 0:
            raise ValueError("signal_strength must be >= 0")


@dataclass(frozen=True)
class PersonaSpec:
    user_id: str
    labels: SoftLabels
    base_hold_mu: float
    base_flight_mu: float
    multipliers: dict

    def __post_init__(self):
        for name, (h, f) in self.multipliers.items():
            if h <= 0 or f <= 0:
                raise ValueError(f"multiplier for {name} must be positive")

    def log_shift(self, signal: float) -> tuple[float, float]:
        h = sum(math.log(m[0]) for m in self.multipliers.values())
        f = sum(math.log(m[1]) for m in self.multipliers.values())
        return signal * h, signal * f


def stable_seed(*parts) -> int:
    return zlib.crc32(":".join(str(p) for p in parts).encode("utf-8"))


def _allocate(counts: dict, n: int) -> list:
    """Largest-remainder allocation of ``n`` items to the given proportions."""
    total = sum(counts.values())
    raw = {k: n * v / total for k, v in counts.items()}
    alloc = {k: int(math.floor(r)) for k, r in raw.items()}
    rest = n - sum(alloc.values())
    for k in sorted(raw, key=lambda k: (-(raw[k] - alloc[k]), list(counts).index(k)))[:rest]:
        alloc[k] += 1
    return [k for k in counts for _ in range(alloc[k])]


def _clipped_normal(rng, spec: dict, n: int) -> np.ndarray:
    v = np.rint(rng.normal(spec["mean"], spec["std"], n))
    return np.clip(v, spec["min"], spec["max"]).astype(int)


def user_ids(n: int) -> list[str]:
    width = max(3, len(str(n)))
    return [f"u{i:0{width}d}" for i in range(1, n + 1)]


def sample_population(config: GeneratorConfig) -> list[tuple[str, SoftLabels]]:
    """Labels with categorical counts allocated to the configured proportions."""
    rng = np.random.default_rng(stable_seed("population", config.seed))
    n = config.n_users
    m = config.marginals
    genders = rng.permutation(_allocate(m["gender"], n))
    majors = rng.permutation(_allocate(m["major"], n))
    styles = rng.permutation(_allocate(m["style"], n))
    ages = _clipped_normal(rng, m["age"], n)
    heights = _clipped_normal(rng, m["height"], n)
    out = []
    for i, uid in enumerate(user_ids(n)):
        out.append((uid, SoftLabels(Gender(genders[i]), Major(majors[i]), Style(styles[i]),
                                    int(ages[i]), int(heights[i]))))
    return out


def multipliers_for(labels: SoftLabels, effects: dict) -> dict:
    age_h, age_f = effects["age_per_year"]
    ht_h, ht_f = effects["height_per_inch"]
    da = labels.age - AGE_REFERENCE
    dh = labels.height - HEIGHT_REFERENCE
    return {
        "gender": tuple(effects["gender"][labels.gender.value]),
        "major": tuple(effects["major"][labels.major.value]),
        "style": tuple(effects["style"][labels.typing_style.value]),
        "age": (age_h ** da, age_f ** da),
        "height": (ht_h ** dh, ht_f ** dh),
    }


def make_persona(user_id: str, labels: SoftLabels, config: GeneratorConfig) -> PersonaSpec:
    rng = np.random.default_rng(stable_seed("persona", config.seed, user_id))
    return PersonaSpec(
        user_id,
        labels,
        math.log(config.base_hold_ms) + rng.normal(0.0, config.individual_hold_sd),
        math.log(config.base_flight_ms) + rng.normal(0.0, config.individual_flight_sd),
        multipliers_for(labels, config.effects),
    )


KEY_NAMES = {" ": "Space", ".": "Period", ",": "Comma"}


def _text_keys(text: str) -> list[str]:
    keys = []
    for ch in text:
        if ch.isupper():
            keys.append("Shift")
            keys.append(ch.lower())
        else:
            keys.append(KEY_NAMES.get(ch, ch))
    return keys


def key_sequence(mode: Mode, n_keys: int, rng, config: GeneratorConfig) -> list[str]:
    keys: list[str] = []
    if mode is Mode.Fixed:
        base = []
        for s in config.fixed_sentences:
            base += _text_keys(s) + ["Space"]
        while len(keys) < n_keys:
            keys += base
    else:
        pool = config.word_pool
        weights = 1.0 / np.arange(1, len(pool) + 1)
        weights /= weights.sum()
        sentence_len = 0
        while len(keys) < n_keys:
            word = pool[rng.choice(len(pool), p=weights)]
            if sentence_len == 0:
                word = word.capitalize()
            keys += _text_keys(word)
            sentence_len += 1
            if sentence_len >= 8 and rng.random() < 0.25:
                keys.append("Period")
                sentence_len = 0
            keys.append("Space")
    return keys[:n_keys]


def key_offset(key: str) -> float:
    """Fixed per-key log-offset shared by every user (some keys are slower)."""
    return ((stable_seed("key", key) % 1000) / 1000.0 - 0.5) * 0.3


def generate_stream(persona: PersonaSpec, device: Device, mode: Mode, n_keys: int, rng,
                    config: GeneratorConfig = GeneratorConfig()) -> list[KeyEvent]:
    keys = key_sequence(mode, n_keys, rng, config)
    n = len(keys)
    dev = math.log(DEVICE_MULTIPLIER[device])
    h_shift, f_shift = persona.log_shift(config.signal_strength)
    offsets = np.array([key_offset(k) for k in keys])
    hold_mu = persona.base_hold_mu + h_shift + dev + offsets
    flight_mu = persona.base_flight_mu + f_shift + dev
    holds = np.maximum(2, np.rint(np.exp(hold_mu + config.hold_sigma * rng.standard_normal(n)))).astype(np.int64)
    gaps = np.maximum(1, np.rint(np.exp(flight_mu + config.flight_sigma * rng.standard_normal(n)))).astype(np.int64)
    overlap = rng.random(n) < config.overlap_prob
    frac = rng.uniform(0.2, 0.9, n)
    into_hold = np.maximum(1, np.floor(frac * holds)).astype(np.int64)
    step = np.where(overlap, into_hold, holds + gaps)
    press = np.concatenate([[0], np.cumsum(step[:-1])]) + int(rng.integers(0, 1000))
    release = press + holds
    return [
        KeyEvent(persona.user_id, device, mode, k, int(p), int(r))
        for k, p, r in zip(keys, press, release)
    ]


def generate(config: GeneratorConfig) -> tuple[list[KeyEvent], dict[str, SoftLabels]]:
    events: list[KeyEvent] = []
    labels = {}
    for uid, lab in sample_population(config):
        labels[uid] = lab
        persona = make_persona(uid, lab, config)
        for d, device in enumerate(DEVICES):
            for m, mode in enumerate(MODES):
                rng = np.random.default_rng(stable_seed("stream", config.seed, uid, d, m))
                events += generate_stream(persona, device, mode, config.keystrokes_per_stream, rng, config)
    return events, labels


def generate_dataset(config: GeneratorConfig) -> Dataset:
    events, labels = generate(config)
    return build_dataset(events, labels)


def write(config: GeneratorConfig, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    events, labels = generate(config)
    ev_path, lab_path = out / "events.csv", out / "labels.csv"
    ev_path.write_text(format_events(events), encoding="utf-8")
    lab_path.write_text(format_labels(labels), encoding="utf-8")
    return ev_path, lab_path
