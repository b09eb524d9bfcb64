import math

import numpy as np
import pytest
from scipy.stats import ks_2samp

from keydyn.features import DeviceConfig
from keydyn.ingest import Device, Gender, Major, Mode, SoftLabels, Style, build_dataset, parse_events
from keydyn.protocol import ExperimentConfig, FeatureStore, ModelRecipe, Task, run_experiment
from keydyn.synth import (
    GeneratorConfig,
    PersonaSpec,
    generate,
    generate_dataset,
    generate_stream,
    make_persona,
    multipliers_for,
    sample_population,
    write,
)


def test_population_marginals():
    pop = sample_population(GeneratorConfig(n_users=117, seed=11))
    males = sum(l.gender is Gender.Male for _, l in pop)
    assert abs(males / 117 - 72 / 117) <= 0.05
    styles = [l.typing_style for _, l in pop]
    assert styles.count(Style.A_MustLook) == 6
    assert all(19 <= l.age <= 35 for _, l in pop)
    assert all(54 <= l.height <= 74 for _, l in pop)
    assert abs(np.mean([l.age for _, l in pop]) - 24.97) < 1.0


def test_population_deterministic():
    cfg = GeneratorConfig(seed=5)
    assert sample_population(cfg) == sample_population(cfg)
    assert sample_population(cfg) != sample_population(GeneratorConfig(seed=6))


def test_config_validation():
    with pytest.raises(ValueError):
        GeneratorConfig(n_users=3)
    with pytest.raises(ValueError):
        GeneratorConfig(keystrokes_per_stream=50)
    with pytest.raises(ValueError):
        GeneratorConfig(signal_strength=-1)


def twin_personas():
    a = SoftLabels(Gender.Male, Major.CS, Style.C_NoLook, 20, 60)
    b = SoftLabels(Gender.Female, Major.NonCS, Style.A_MustLook, 33, 72)
    effects = GeneratorConfig().effects
    mu_h, mu_f = math.log(95.0), math.log(110.0)
    return (PersonaSpec("p1", a, mu_h, mu_f, multipliers_for(a, effects)),
            PersonaSpec("p2", b, mu_h, mu_f, multipliers_for(b, effects)))


def holds_and_flights(events):
    holds = np.array([e.release_time - e.press_time for e in events])
    flights = np.array([b.press_time - a.release_time for a, b in zip(events, events[1:])])
    return holds, flights


def test_signal_zero_timings_indistinguishable():
    cfg = GeneratorConfig(signal_strength=0.0)
    p1, p2 = twin_personas()
    s1 = generate_stream(p1, Device.Phone, Mode.Fixed, 5000, np.random.default_rng(1), cfg)
    s2 = generate_stream(p2, Device.Phone, Mode.Fixed, 5000, np.random.default_rng(2), cfg)
    (h1, f1), (h2, f2) = holds_and_flights(s1), holds_and_flights(s2)
    assert ks_2samp(h1, h2).pvalue > 0.01
    assert ks_2samp(f1, f2).pvalue > 0.01


def test_signal_one_separates_personas():
    cfg = GeneratorConfig(signal_strength=1.0)
    p1, p2 = twin_personas()
    h1, _ = holds_and_flights(generate_stream(p1, Device.Phone, Mode.Fixed, 5000, np.random.default_rng(1), cfg))
    h2, _ = holds_and_flights(generate_stream(p2, Device.Phone, Mode.Fixed, 5000, np.random.default_rng(2), cfg))
    assert ks_2samp(h1, h2).pvalue < 1e-6


def test_style_a_flights_slower_than_c():
    cfg = GeneratorConfig(signal_strength=1.0)
    a = SoftLabels(Gender.Male, Major.CS, Style.A_MustLook, 25, 67)
    c = SoftLabels(Gender.Male, Major.CS, Style.C_NoLook, 25, 67)
    fa = holds_and_flights(generate_stream(make_persona("x", a, cfg), Device.Desktop, Mode.Free, 3000,
                                           np.random.default_rng(0), cfg))[1]
    fc = holds_and_flights(generate_stream(make_persona("x", c, cfg), Device.Desktop, Mode.Free, 3000,
                                           np.random.default_rng(0), cfg))[1]
    assert fa.mean() > fc.mean()


def test_rollover_rate_near_five_percent():
    cfg = GeneratorConfig()
    p1, _ = twin_personas()
    events = generate_stream(p1, Device.Desktop, Mode.Free, 20000, np.random.default_rng(3), cfg)
    _, flights = holds_and_flights(events)
    rate = float(np.mean(flights < 0))
    sd = math.sqrt(0.05 * 0.95 / len(flights))
    assert abs(rate - 0.05) <= 4 * sd


def test_streams_time_monotone_and_valid():
    cfg = GeneratorConfig(n_users=6, keystrokes_per_stream=200, seed=2)
    events, labels = generate(cfg)
    ds = build_dataset(events, labels)
    assert ds.report.events_dropped == 0
    assert ds.report.events_kept == 6 * 6 * 200
    for stream in ds.streams.values():
        press = [e.press_time for e in stream]
        assert press == sorted(press)
        assert all(e.release_time > e.press_time for e in stream)


def test_fixed_mode_repeats_sentences():
    cfg = GeneratorConfig()
    p1, _ = twin_personas()
    a = [e.key_label for e in generate_stream(p1, Device.Desktop, Mode.Fixed, 300, np.random.default_rng(0), cfg)]
    b = [e.key_label for e in generate_stream(p1, Device.Desktop, Mode.Fixed, 300, np.random.default_rng(9), cfg)]
    assert a == b


def test_written_csv_is_byte_deterministic(tmp_path):
    cfg = GeneratorConfig(n_users=5, keystrokes_per_stream=100, seed=4)
    ev1, lab1 = write(cfg, tmp_path / "a")
    ev2, lab2 = write(cfg, tmp_path / "b")
    assert ev1.read_bytes() == ev2.read_bytes()
    assert lab1.read_bytes() == lab2.read_bytes()
    assert len(parse_events(ev1.read_bytes())) == 5 * 6 * 100


@pytest.mark.slow
def test_gender_accuracy_monotone_in_signal():
    recipe = ModelRecipe("NaiveBayes")
    means = []
    for signal in (0.0, 0.5, 1.0):
        accs = []
        for seed in range(5):
            ds = generate_dataset(GeneratorConfig(signal_strength=signal, seed=seed, keystrokes_per_stream=300))
            cfg = ExperimentConfig(Task.Gender, DeviceConfig.Desktop, Mode.Free, recipe,
                                   selector_k=(30, 100, 300), seed=seed)
            accs.append(run_experiment(cfg, ds, FeatureStore(ds))[0])
        means.append(float(np.mean(accs)))
    assert means[0] <= means[1] <= means[2], means
