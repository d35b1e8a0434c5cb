"""Toggle the objective's terms on a small configuration and compare rows.

Run: python3 demos/04_ablation_grid.py [out_dir]
Each row switches terms of the objective on or off; the grid is written to
out_dir/grid.json and grid.csv.  The small configuration keeps this to a few
minutes, so the numbers are noisy; the acceptance suite makes the real
comparison at full size over three seeds.
"""
import sys
from pathlib import Path

from acnet.trainer import TOGGLE_ROWS, ExperimentConfig, run_ablation_grid

out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("demo_out")

# %% a shortened base configuration
base = ExperimentConfig(epochs=3, base_channels=4, n_res_blocks=2)
for name, overrides in TOGGLE_ROWS.items():
    print(f"{name:>15}: {overrides or 'all terms on'}")

# %% run every row
rows = run_ablation_grid(base, TOGGLE_ROWS, out_dir=out_dir / "ablation")

# %% summary table
print(f"\n{'row':>15} {'status':>7} {'mAP@all':>8} {'Prec@10':>8} {'seconds':>8}")
for r in rows:
    if r["status"] == "ok":
        print(f"{r['cell']:>15} {r['status']:>7} {r['mAP@all']:8.3f} {r['Prec@10']:8.3f} {r['train_seconds']:8.1f}")
    else:
        print(f"{r['cell']:>15} {r['status']:>7} {r['error']}")
print("chance mAP@all:", round(rows[0].get("chance_mAP@all", float("nan")), 3))
print("wrote", out_dir / "ablation" / "grid.csv")
