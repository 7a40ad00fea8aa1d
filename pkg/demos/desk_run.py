"""Small end-to-end run: prepare, train, evaluate and report.

    python demos/desk_run.py [out_dir] [epochs]

Uses the defaults with two unrolled blocks per coil stack. With 50 epochs
this takes several minutes on one core.
"""

import sys
from pathlib import Path

from cinerecon import config
from cinerecon.cli import cmd_eval, cmd_prepare, cmd_report, cmd_train
from cinerecon.metrics import MetricsReport

out = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/desk")
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 50

cfg = config.defaults()
cfg.update({"model.N": 2, "train.epochs": epochs})
cfg = config.validate(cfg)

cmd_prepare(cfg, out)
cmd_train(cfg, out)
cmd_eval(cfg, out)
cmd_report([out], out / "report")

rep = MetricsReport.read_csv(out / "eval" / "metrics.csv")
for method in rep.methods():
    s = rep.summary(method)
    print(f"{method:12s} PSNR {s['psnr_db'][0]:6.2f} dB  SSIM {s['ssim'][0]:.4f}  sigma {s['sigma'][0]:6.2f}")
print(f"montage: {out / 'report' / 'montage.pgm'}")
