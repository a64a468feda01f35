"""Validation-tuned retrieval augmentation vs. the untouched baseline on one dataset/horizon.

Stage one searches (top-k, tau) at alpha = 0.9, stage two searches alpha; the
backbone's training settings are never changed. Example (ETTh2, horizon 336):

    python scripts/plugin_gain.py data/ETT-small/ETTh2.csv --pred-len 336 --lr 0.05
"""

import argparse
import json
from pathlib import Path

from contrag.config import ExperimentConfig
from contrag.evaluation import improvement, plugin_search, run_row, write_rows
from contrag.pipeline import Experiment

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("data")
    ap.add_argument("--pred-len", type=int, default=336)
    ap.add_argument("--lr", type=float, default=0.05)
    ap.add_argument("--split", default="ett-hour")
    ap.add_argument("--search-seed", type=int, default=2021)
    ap.add_argument("--seeds", type=int, nargs="+", default=[2021, 2022, 2023])
    ap.add_argument("--out", default="out/tables/plugin_gain")
    a = ap.parse_args()
    base = ExperimentConfig(data=a.data, split=a.split, seq_len=336, pred_len=a.pred_len,
                            learning_rate=a.lr, seeds=(a.search_seed,))
    exp = Experiment(base)
    best, trace = plugin_search(exp, base)
    final = best.replace(seeds=tuple(a.seeds))
    ref = run_row(exp, final.replace(variant="baseline"), "baseline")
    aug = run_row(exp, final, "augmented")
    aug.improvement_mse = improvement(ref.mse, aug.mse)
    aug.improvement_mae = improvement(ref.mae, aug.mae)
    print(f"selected k={best.top_k} tau={best.tau} alpha={best.alpha}")
    print(f"baseline MSE {ref.mse:.4f} MAE {ref.mae:.4f}")
    print(f"augmented MSE {aug.mse:.4f} MAE {aug.mae:.4f}  ({aug.improvement_mse:+.3f}% MSE)")
    out = Path(a.out)
    write_rows([ref, aug], out)
    out.with_name(out.name + "_search.json").write_text(json.dumps(trace, indent=2))
