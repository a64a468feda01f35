"""Write a seeded ETT-style CSV (date column plus channels) for smoke runs."""

import argparse

from contrag.synthetic import make_series, write_csv

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out")
    ap.add_argument("--rows", type=int, default=17420)
    ap.add_argument("--channels", type=int, default=7)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--noise", type=float, default=0.3)
    a = ap.parse_args()
    path = write_csv(a.out, make_series(a.rows, a.channels, a.seed, a.noise))
    print(path)
