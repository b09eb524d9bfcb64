"""Brute-force reference evaluators, written independently of the package."""

import math
import statistics
from fractions import Fraction


def holds(events):
    out = {}
    for e in events:
        out.setdefault(e.key_label, []).append(e.release_time - e.press_time)
    return out


def flights(events):
    out = {}
    for i in range(len(events) - 1):
        a, b = events[i], events[i + 1]
        vals = {
            1: b.press_time - a.release_time,
            2: b.release_time - a.release_time,
            3: b.press_time - a.press_time,
            4: b.release_time - a.press_time,
        }
        for idx, v in vals.items():
            out.setdefault((a.key_label, b.key_label, idx), []).append(v)
    return out


def words(events):
    found, run = [], []
    for e in events + [None]:
        if e is not None and len(e.key_label) == 1 and e.key_label.isascii() and e.key_label.isalpha():
            run.append(e)
        else:
            if len(run) > 1:
                found.append(run)
            run = []
    return found


def stat(values, f):
    if f == "mean":
        return statistics.fmean(values)
    if f == "median":
        return statistics.median(values)
    # exact rational variance, rounded once to a double, then sqrt
    n = len(values)
    mu = Fraction(sum(values), n)
    var = sum((Fraction(v) - mu) ** 2 for v in values) / n
    return math.sqrt(float(var))


def word_features(run):
    text = "".join(e.key_label.lower() for e in run)
    hold_list = [e.release_time - e.press_time for e in run]
    pairs = list(zip(run, run[1:]))
    fl = {
        1: [b.press_time - a.release_time for a, b in pairs],
        2: [b.release_time - a.release_time for a, b in pairs],
        3: [b.press_time - a.press_time for a, b in pairs],
        4: [b.release_time - a.press_time for a, b in pairs],
    }
    feats = {"WN": run[-1].release_time - run[0].press_time}
    for f in ("mean", "std", "median"):
        feats[("K", f)] = stat(hold_list, f)
        for i in range(1, 5):
            feats[(i, f)] = stat(fl[i], f)
    return text, feats


def quantile(values, p):
    s = sorted(values)
    pos = (len(s) - 1) * p
    lo = int(pos)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (s[hi] - s[lo]) * (pos - lo)
