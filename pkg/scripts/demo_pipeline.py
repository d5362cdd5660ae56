"""Small end-to-end run through the CLI: data, two variants, evaluation,
and a sphere rendering of one predicted lighting.

Usage: python3 scripts/demo_pipeline.py OUT_DIR
"""
import json
import sys
from pathlib import Path

import numpy as np

from ldankit import cli, ldan
from ldankit.synthgen import Dataset

DATA = {"n_pairs": 200, "n_real": 400, "n_eval_ids": 10, "resolution": 16}
TRAIN = {"widths": [8, 16], "blocks_per_stage": 1, "synth_epochs": 4, "real_epochs": 8, "outer_iters": 3}


def main(out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "data.json").write_text(json.dumps(DATA))
    (out / "train.json").write_text(json.dumps(TRAIN))
    run = lambda *a: cli.main([*a, "--reference-mode"]) == 0 or sys.exit(f"failed: {a}")
    run("gen-data", "--out", str(out / "data"), "--config", str(out / "data.json"), "--force")
    for variant in ("ldan", "real"):
        run("train", "--variant", variant, "--data", str(out / "data"), "--out", str(out / variant),
            "--config", str(out / "train.json"), "--force")
        run("eval", "--run", str(out / variant), "--data", str(out / "data"))
        top1 = json.loads((out / variant / "eval" / "classify.json").read_text())["top1"][0]
        print(f"{variant:5s} top-1 {top1:.1f}%")
    ev = Dataset(out / "data").split("eval")
    bundle, _ = cli.load_bundle(out / "ldan")
    pred = ldan.predict(bundle, ev.images[:1])[0]
    run("render", "--light", ",".join(f"{v:.6f}" for v in np.asarray(pred)), "--out", str(out / "pred.png"))


if __name__ == "__main__":
    if len(sys.argv) != 2:
        sys.exit(__doc__)
    main(sys.argv[1])
