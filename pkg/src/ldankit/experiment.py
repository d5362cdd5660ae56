"""Variant-ordering experiment: one dataset, every training variant over
several seeds, condition-classification top-1 per run.

The acceptance profile shrinks images and networks so 6 variants x 5 seeds
fit a desk-scale time budget; the pretrained S and L of a seed are shared
by the three variants that start from them.
"""
from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from multiprocessing import get_context
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import ldan
from .evaluation import classify_conditions
from .synthgen import DataConfig, Dataset, build_dataset

ORDER = ("ldan", "no_gan", "no_regression", "real", "model_c", "model_b")


@dataclass
class ExperimentProfile:
    data: DataConfig = field(default_factory=lambda: DataConfig(
        n_pairs=1000, n_real=2000, n_eval_ids=20, resolution=16))
    train: ldan.TrainConfig = field(default_factory=lambda: ldan.TrainConfig(
        widths=(8, 16, 32), blocks_per_stage=1, synth_epochs=10, real_epochs=30, outer_iters=10))
    seeds: tuple = (0, 1, 2, 3, 4)
    variants: tuple = ORDER

    def to_dict(self):
        return {"data": self.data.to_dict(), "train": self.train.to_dict(), "seeds": list(self.seeds),
                "variants": list(self.variants)}


def acceptance_profile() -> ExperimentProfile:
    return ExperimentProfile()


def _run_seed(profile: ExperimentProfile, data_dir, seed, progress=None):
    with threadpool_limits(1):
        ds = Dataset(data_dir)
        ev = ds.split("eval")
        base = replace(profile.train, seed=seed)
        pretrained = None
        out = {}
        if any(v in ("ldan", "no_gan", "no_regression") for v in profile.variants):
            ts = time.perf_counter()
            S, L, _, _ = ldan.train_synthetic(ds.split("synth_pairs"), base, ds.image_shape)
            pretrained = (S, L)
            if progress:
                progress(f"seed {seed} synthetic pretraining {time.perf_counter() - ts:.1f}s")
        for v in profile.variants:
            ts = time.perf_counter()
            bundle = ldan.train(ds, replace(base, variant=v), pretrained=pretrained)
            rep = classify_conditions(ldan.predict(bundle, ev.images), ev.condition_id, seed=seed)
            out[v] = {"top1": rep.top1[0], "top2": rep.top2[0], "top3": rep.top3[0],
                      "seconds": time.perf_counter() - ts}
            if progress:
                progress(f"seed {seed} {v:14s} top1 {rep.top1[0]:6.2f}  ({out[v]['seconds']:.1f}s)")
    return out


def run_experiment(profile: ExperimentProfile, workdir, progress=print, workers=None):
    """Generate data under ``workdir/data`` and train/evaluate every
    (seed, variant).  Seeds run in separate single-threaded processes, at
    most ``workers`` at a time (default: one per core).  Results do not
    depend on the worker count.  Returns the results dict (also written as
    JSON)."""
    workdir = Path(workdir)
    t0 = time.perf_counter()
    build_dataset(profile.data, workdir / "data", overwrite=True)
    t_gen = time.perf_counter() - t0
    workers = max(1, min(workers or os.cpu_count() or 1, len(profile.seeds)))
    runs = {v: {} for v in profile.variants}
    if workers == 1:
        per_seed = {s: _run_seed(profile, workdir / "data", s, progress) for s in profile.seeds}
    else:
        with ProcessPoolExecutor(workers, mp_context=get_context("spawn")) as pool:
            futs = {s: pool.submit(_run_seed, profile, workdir / "data", s) for s in profile.seeds}
            per_seed = {}
            for s, f in futs.items():
                per_seed[s] = f.result()
                if progress:
                    progress(f"seed {s} " + ", ".join(f"{v} {r['top1']:.2f}" for v, r in per_seed[s].items()))
    for s, res in per_seed.items():
        for v, r in res.items():
            runs[v][s] = r
    summary = {v: {
        "top1_mean": float(np.mean([r["top1"] for r in runs[v].values()])),
        "top1_std": float(np.std([r["top1"] for r in runs[v].values()])),
    } for v in profile.variants}
    result = {
        "profile": profile.to_dict(),
        "runs": {v: {str(s): r for s, r in rs.items()} for v, rs in runs.items()},
        "summary": summary,
        "workers": workers,
        "seconds_generate": t_gen,
        "seconds_total": time.perf_counter() - t0,
    }
    (workdir / "results.json").write_text(json.dumps(result, indent=2, sort_keys=True))
    return result


def ordering_checks(summary):
    """The three ordering statements on seed-mean top-1."""
    m = {v: s["top1_mean"] for v, s in summary.items()}
    return {
        "ldan_beats_real_by_2pp": m["ldan"] - m["real"] >= 2.0,
        "ldan_ge_c_ge_b": m["ldan"] >= m["model_c"] >= m["model_b"],
        "no_regression_below_real": m["no_regression"] < m["real"],
    }
