"""Reference ADF values for the C++ tests.

Runs statsmodels' adfuller with a constant, no trend and a fixed Schwert lag,
on (a) a 500-seed Monte Carlo of white noise and random walks at T = 2000 and
(b) a few closed-form series that the C++ side can rebuild exactly.
"""

import math

import numpy as np
from statsmodels.tsa.stattools import adfuller

T = 2000
SEEDS = 500


def schwert(n):
    p = math.floor(12.0 * (n / 100.0) ** 0.25)
    return min(p, (n - 13) // 2)


def adf(y, lag=None):
    lag = schwert(len(y)) if lag is None else lag
    return adfuller(y, maxlag=lag, regression="c", autolag=None)[0]


def closed_form(kind, n):
    t = np.arange(n, dtype=float)
    if kind == "wave":
        return np.sin(0.3 * t) + 0.5 * np.cos(1.7 * t) + 0.001 * t
    if kind == "chirp":
        return np.sin(0.01 * t * t) + 0.05 * t
    if kind == "sawtooth":
        return np.mod(t * 7.0, 13.0) + np.sin(t)
    raise ValueError(kind)


def main():
    rng = np.random.default_rng(20240601)
    wn, rw = [], []
    for _ in range(SEEDS):
        e = rng.standard_normal(T)
        wn.append(adf(e))
        rw.append(adf(np.cumsum(rng.standard_normal(T))))
    print(f"lag(T={T}) = {schwert(T)}")
    print(f"white noise 5th percentile  = {np.percentile(wn, 5):.6f}")
    print(f"random walk 95th percentile = {np.percentile(rw, 95):.6f}")
    for kind, n in [("chirp", 300), ("sawtooth", 120)]:
        y = closed_form(kind, n)
        print(f"{kind} n={n} lag={schwert(n)} adf={adf(y):.12f} adf_lag2={adf(y, 2):.12f}")
    # Sum of sinusoids plus a trend obeys a short linear recurrence, so with
    # enough lags the regression fits exactly and the statistic is noise.
    y = closed_form("wave", 200)
    print(f"wave n=200 adf_lag2={adf(y, 2):.12f} adf_lag{schwert(200)}={adf(y):.3e} (exact fit)")


if __name__ == "__main__":
    main()
