"""Component and parameter ablations around one augmented configuration.

    python scripts/ablations.py data/ETT-small/ETTh1.csv --pred-len 96 --top-k 3 --tau 0.1
"""

import argparse
from pathlib import Path

from contrag.config import ExperimentConfig
from contrag.evaluation import run_ablation_matrix, standard_ablations, write_rows
from contrag.pipeline import Experiment

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("data")
    ap.add_argument("--pred-len", type=int, default=96)
    ap.add_argument("--seq-len", type=int, default=336)
    ap.add_argument("--split", default="ett-hour")
    ap.add_argument("--top-k", type=int, default=1)
    ap.add_argument("--tau", type=float, default=0.01)
    ap.add_argument("--alpha", type=float, default=0.75)
    ap.add_argument("--lr", type=float, default=0.005)
    ap.add_argument("--seeds", type=int, nargs="+", default=[2021, 2022, 2023])
    ap.add_argument("--out", default="out/tables/ablation")
    a = ap.parse_args()
    cfg = ExperimentConfig(data=a.data, split=a.split, seq_len=a.seq_len, pred_len=a.pred_len, top_k=a.top_k,
                           tau=a.tau, alpha=a.alpha, learning_rate=a.lr, seeds=tuple(a.seeds))
    rows = run_ablation_matrix(Experiment(cfg), standard_ablations(cfg))
    for r in rows:
        imp = "" if r.improvement_mse is None else f"{r.improvement_mse:+.2f}%"
        print(f"{r.variant:22s} MSE {r.mse:.4f}  MAE {r.mae:.4f}  {imp}")
    write_rows(rows, Path(a.out))
