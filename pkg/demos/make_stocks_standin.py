"""Write a daily OHLC/volume CSV from a seeded geometric random walk.

    python demos/make_stocks_standin.py out.csv [days]
"""
import sys

import numpy as np

path = sys.argv[1]
days = int(sys.argv[2]) if len(sys.argv) > 2 else 500
rng = np.random.default_rng(17)

close = 100 * np.exp(np.cumsum(rng.normal(0.0005, 0.015, days)))
open_ = close * np.exp(rng.normal(0, 0.005, days))
high = np.maximum(open_, close) * (1 + rng.uniform(0, 0.01, days))
low = np.minimum(open_, close) * (1 - rng.uniform(0, 0.01, days))
volume = rng.integers(1_000_000, 5_000_000, days)
dates = np.datetime64("2020-01-01") + np.arange(days)

with open(path, "w") as fh:
    fh.write("Date,Open,High,Low,Close,Adj Close,Volume\n")
    for row in zip(dates, open_, high, low, close, close * 0.98, volume):
        fh.write(",".join(str(v) for v in row) + "\n")
