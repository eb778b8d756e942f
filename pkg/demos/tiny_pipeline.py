"""Generate, train, calibrate, infer and evaluate with a trimmed tiny preset.

Everything goes through the command line entry point, so the steps below are
the same ones a shell user would type.  Takes under a minute on one core.
"""
import json
import sys
import tempfile
from pathlib import Path

from lungmap.pipeline.cli import main
from lungmap.pipeline.config import preset

root = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="lungmap-"))
root.mkdir(parents=True, exist_ok=True)

cfg = preset("tiny")
cfg.transducer.update(n_elements_total=11, n_active=4, n_events=8)   # 8 events of 4 receivers
cfg.train["augment"]["mask_s_max"] = 8
cfg.train["batch"] = 8
cfg.splits = {"train": 24, "val": 0, "eval": 8, "finetune": 4}
cfg.validate().to_json(root / "config.json")
c = str(root / "config.json")


def run(*args):
    print("$ lungmap", " ".join(args))
    code = main(list(args))
    if code:
        sys.exit(code)


run("generate", "--config", c, "--split", "train", "--out", str(root / "data"))
run("generate", "--config", c, "--split", "eval", "--out", str(root / "data"))
run("train", str(root / "data/train.json"), "--config", c, "--epochs", "10", "--out", str(root / "run"))
run("calibrate", str(root / "data/eval.json"), "--checkpoint", str(root / "run/luna.pwt"), "--out", str(root / "run"))
run("infer", str(root / "data/eval.json"), "--checkpoint", str(root / "run/luna.pwt"),
    "--calibration", str(root / "run/calibration.json"), "--out", str(root / "pred"))
run("evaluate", str(root / "pred/predictions.json"), "--out", str(root / "pred"))

agg = json.loads((root / "pred/report.json").read_text())["aggregate"]
print(f"outputs in {root}")
print(f"mean aeration error {agg['aeration_error_mean']:.3f} over {agg['n']} eval records")
