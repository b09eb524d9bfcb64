"""Quick built-in checks: gradient checks plus small oracle comparisons.

Each check returns (name, passed, detail). ``keydyn selftest`` prints one
line per check.
"""

from __future__ import annotations

import math
import time

import numpy as np

from .features import digraph_flights, iqr_filter, quartiles, unigraph_holds
from .ingest import Device, KeyEvent, Mode
from .neural import Network, NetworkSpec, sequence_shape, square_side
from .neural.gradcheck import check_network
from .preprocess import SmoteConfig, borderline_smote, mi_scores, rank_features


def _random_stream(rng, n):
    t = 0
    out = []
    for i in range(n):
        t += int(rng.integers(-20, 200))
        t = max(t, out[-1].press_time if out else 0)
        hold = int(rng.integers(1, 150))
        out.append(KeyEvent("u", Device.Desktop, Mode.Free, "abc"[int(rng.integers(3))], t, t + hold))
    return out


def check_features(rng) -> tuple[bool, str]:
    for _ in range(50):
        ev = _random_stream(rng, int(rng.integers(2, 10)))
        holds = unigraph_holds(ev)
        for key, vals in holds.items():
            if vals != [e.release_time - e.press_time for e in ev if e.key_label == key]:
                return False, f"hold mismatch for {key}"
        for (k1, k2, i), vals in digraph_flights(ev).items():
            exp = []
            for a, b in zip(ev, ev[1:]):
                if (a.key_label, b.key_label) == (k1, k2):
                    exp.append((b.press_time - a.release_time, b.release_time - a.release_time,
                                b.press_time - a.press_time, b.release_time - a.press_time)[i - 1])
            if vals != exp:
                return False, f"F{i} mismatch for {k1}{k2}"
    return True, "50 random streams"


def check_iqr(rng) -> tuple[bool, str]:
    for _ in range(500):
        x = list(rng.lognormal(0, 1, int(rng.integers(1, 40))))
        once = iqr_filter(x)
        if iqr_filter(once) != once or not set(once) <= set(x):
            return False, "not idempotent or not a subset"
        q1, q3 = quartiles(x)
        r1, r3 = np.percentile(x, [25, 75])
        if abs(q1 - r1) > 1e-9 or abs(q3 - r3) > 1e-9:
            return False, "quartiles disagree with numpy"
    return True, "500 random lists"


def check_gradients(rng) -> tuple[bool, str]:
    specs = {
        "dense": NetworkSpec((("Dense", {"in": 5, "out": 4}), ("Activation", {"fn": "tanh"}),
                              ("Dense", {"in": 4, "out": 3})), seed=1),
        "conv_bn": NetworkSpec((("Conv2D", {"in_ch": 1, "out_ch": 2, "kernel": 3, "pad": 1}),
                                ("BatchNorm", {"dim": 2}), ("Activation", {"fn": "relu"}),
                                ("Flatten", {}), ("Dense", {"in": 32, "out": 2})), seed=2,
                               input_dim=16, input_transform="square"),
        "rnn": NetworkSpec((("RNNCellStack", {"layers": 2, "hidden": 3, "in": 2}),
                            ("Dense", {"in": 3, "out": 2})), seed=3, input_dim=4, input_transform="sequence"),
        "lstm": NetworkSpec((("LSTMStack", {"layers": 2, "hidden": 3, "in": 2}),
                             ("Dense", {"in": 3, "out": 2})), seed=4, input_dim=4, input_transform="sequence"),
    }
    worst = 0.0
    for name, spec in specs.items():
        dim = spec.input_dim or 5
        X = rng.standard_normal((3, dim))
        net = Network(spec)
        out = net.forward(X, train=True)
        errs = check_network(net, X, rng.standard_normal(out.shape))
        worst = max(worst, max(errs.values()))
    return worst <= 1e-4, f"max relative error {worst:.2e}"


def check_reshapes(_rng) -> tuple[bool, str]:
    for n in range(1, 2001):
        s = square_side(n)
        if not s * s <= n < (s + 1) ** 2:
            return False, f"square side wrong for {n}"
    for n in range(4, 2001):
        a, b = sequence_shape(n)
        c = max(m for m in range(4, n + 1) if any(m % d == 0 for d in range(2, math.isqrt(m) + 1)))
        if a * b != c or not 2 <= a <= b:
            return False, f"sequence shape wrong for {n}"
    return True, "N up to 2000"


def check_smote(rng) -> tuple[bool, str]:
    for _ in range(20):
        X = rng.standard_normal((40, 3))
        y = np.array([0] * 30 + [1] * 10)
        X[y == 1] += 1.0
        res = borderline_smote(X, y, SmoteConfig(seed=int(rng.integers(1 << 30))))
        counts = np.bincount(res.y)
        if counts[0] != counts[1] or not np.array_equal(res.X[:40], X):
            return False, "counts unequal or originals changed"
    return True, "20 imbalanced sets"


def check_mi(rng) -> tuple[bool, str]:
    hits = 0
    for _ in range(10):
        y = rng.integers(0, 2, 400)
        X = rng.standard_normal((400, 50))
        X[:, 7] += 1.5 * y
        hits += rank_features(mi_scores(X, y))[0] == 7
    return hits >= 9, f"informative feature first in {hits}/10"


CHECKS = {
    "features": check_features,
    "iqr": check_iqr,
    "gradients": check_gradients,
    "reshapes": check_reshapes,
    "smote": check_smote,
    "mutual_information": check_mi,
}


def run(seed: int = 0) -> list[tuple[str, bool, str, float]]:
    results = []
    for name, fn in CHECKS.items():
        rng = np.random.default_rng(seed)
        t = time.perf_counter()
        try:
            ok, detail = fn(rng)
        except Exception as exc:  # a crash is a failed check, not a crashed selftest
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, bool(ok), detail, time.perf_counter() - t))
    return results
