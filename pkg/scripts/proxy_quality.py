"""Continuation-proxy agreement (MSE, MAE, Corr) on the test split for several files.

    python scripts/proxy_quality.py data/ETT-small/ETTh1.csv data/ETT-small/ETTh2.csv --pred-len 96
"""

import argparse
from pathlib import Path

from contrag.config import ExperimentConfig
from contrag.evaluation import experiment_quality
from contrag.pipeline import Experiment

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("data", nargs="+")
    ap.add_argument("--pred-len", type=int, default=96)
    ap.add_argument("--split", default="ett-hour")
    ap.add_argument("--top-k", type=int, default=1)
    ap.add_argument("--tau", type=float, default=0.01)
    ap.add_argument("--corr", default="pooled", choices=["pooled", "per-query"])
    a = ap.parse_args()
    print("dataset      mse     mae     corr   queries  (standardized scale)")
    for path in a.data:
        cfg = ExperimentConfig(data=path, split=a.split, pred_len=a.pred_len, top_k=a.top_k, tau=a.tau,
                               corr_mode=a.corr)
        q = experiment_quality(Experiment(cfg), cfg)
        print(f"{Path(path).stem:10s} {q.mse:7.4f} {q.mae:7.4f} {q.corr:7.4f} {q.n_queries:8d}")
