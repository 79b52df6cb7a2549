"""Reference values for the special-function tests.

Ei is summed from its convergent power series, erf from its Maclaurin
series, at 150 significant digits with mpmath used only as a
big-float accumulator. erfc is 1 - erf at that precision.

Writes crates/core/tests/data/specfun_oracles.csv (or the path given).
"""
import csv
import pathlib
import sys

from mpmath import mp, mpf, euler, log, sqrt, pi, nstr

mp.dps = 150


def ei_series(x):
    x = mpf(x)
    total = euler + log(abs(x))
    term = mpf(1)
    k = 1
    while True:
        term *= x / k
        add = term / k
        total += add
        if abs(add) < mpf(10) ** -160 and k > 64:
            break
        k += 1
    return total


def erf_series(x):
    x = mpf(x)
    total = mpf(0)
    n = 0
    term = x
    while True:
        add = term / (2 * n + 1)
        total += add
        if abs(add) < mpf(10) ** -160 and n > 64:
            break
        n += 1
        term *= -x * x / n
    return 2 / sqrt(pi) * total


ei_points = [-1e-6, -1e-3, -0.1, -0.5, -1, -2, -3, -5, -7.9, -8, -8.1, -10, -15,
             -20, -30, -40, -50, 1e-6, 0.1, 0.5, 1, 2, 5, 8, 10, 20, 30, 40, 50]
erf_points = [1e-8, 0.1, 0.5, 1, 1.5, 2, 2.5, 3, 3.5, 4, 5, 6]
erfc_points = [-2, -0.5, 0.1, 0.5, 1, 2, 3, 4, 5, 6, 8, 10]

out = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else
                   pathlib.Path(__file__).resolve().parent.parent
                   / "crates/core/tests/data/specfun_oracles.csv")
out.parent.mkdir(parents=True, exist_ok=True)
with out.open("w", newline="") as f:
    w = csv.writer(f, lineterminator="\n")
    w.writerow(["func", "x", "value"])
    for x in ei_points:
        w.writerow(["ei", repr(float(x)), nstr(ei_series(x), 25)])
    for x in erf_points:
        w.writerow(["erf", repr(float(x)), nstr(erf_series(x), 25)])
    for x in erfc_points:
        w.writerow(["erfc", repr(float(x)), nstr(1 - erf_series(x), 25)])
print(f"wrote {out}")
