#!/usr/bin/env python3
"""Generate the vendored mobile-price surrogate dataset.

The public Kaggle "mobile price classification" training file (2000 rows,
20 integer/decimal features, 4 balanced price classes) cannot be fetched in
offline builds, so this script synthesizes a seeded stand-in with the same
column schema, value ranges and a similar label structure (price class is
dominated by RAM, with smaller battery and screen-resolution effects).

Usage: python3 scripts/make_mobile_surrogate.py > crates/core/data/mobile.csv
"""

import csv
import sys

import numpy as np

SEED = 20190810
N = 2000


def main() -> None:
    rng = np.random.default_rng(SEED)
    cols = {}
    cols["battery_power"] = rng.integers(501, 1999, N)
    cols["blue"] = rng.integers(0, 2, N)
    cols["clock_speed"] = rng.integers(5, 31, N) / 10.0
    cols["dual_sim"] = rng.integers(0, 2, N)
    cols["fc"] = np.minimum(rng.geometric(0.2, N) - 1, 19)
    cols["four_g"] = rng.integers(0, 2, N)
    cols["int_memory"] = rng.integers(2, 65, N)
    cols["m_dep"] = rng.integers(1, 11, N) / 10.0
    cols["mobile_wt"] = rng.integers(80, 201, N)
    cols["n_cores"] = rng.integers(1, 9, N)
    cols["pc"] = np.maximum(cols["fc"], rng.integers(0, 21, N))
    px_width = rng.integers(500, 1999, N)
    cols["px_height"] = (rng.random(N) * (px_width - 20) * 0.9).astype(int) + rng.integers(0, 20, N)
    cols["px_width"] = px_width
    cols["ram"] = rng.integers(256, 3999, N)
    cols["sc_h"] = rng.integers(5, 20, N)
    cols["sc_w"] = np.minimum(rng.integers(0, 19, N), cols["sc_h"])
    cols["talk_time"] = rng.integers(2, 21, N)
    three_g = rng.random(N) < 0.55
    cols["three_g"] = np.where(cols["four_g"] == 1, 1, three_g.astype(int))
    cols["touch_screen"] = rng.integers(0, 2, N)
    cols["wifi"] = rng.integers(0, 2, N)

    score = (
        (cols["ram"] - 256) / 3742.0 * 10.0
        + (cols["battery_power"] - 501) / 1497.0 * 1.6
        + cols["px_height"] / 1960.0 * 1.0
        + (cols["px_width"] - 500) / 1498.0 * 1.0
        + rng.normal(0.0, 0.25, N)
    )
    order = np.argsort(score, kind="stable")
    price = np.empty(N, dtype=int)
    price[order] = np.arange(N) * 4 // N

    names = list(cols.keys())
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(names + ["price_range"])
    for i in range(N):
        row = []
        for name in names:
            v = cols[name][i]
            row.append(f"{v:.1f}" if name in ("clock_speed", "m_dep") else str(int(v)))
        w.writerow(row + [str(price[i])])


if __name__ == "__main__":
    main()
