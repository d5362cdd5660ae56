"""``ldankit`` command line: gen-data, train, eval, render, gradcheck, bench.

Exit codes: 0 success, 1 failed check (gradcheck), 2 usage error,
3 numerical abort, 4 missing input.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import shutil
import sys
import tempfile
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import ldan, sh_core, synthgen
from .errors import InvalidInputError, NumericalAbortError

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE, EXIT_NUMERICAL, EXIT_MISSING = 0, 1, 2, 3, 4

VARIANT_FLAGS = {
    "ldan": "ldan", "real": "real", "model-b": "model_b", "model-c": "model_c",
    "no-gan": "no_gan", "no-regression": "no_regression",
}


class MissingInput(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _load_config(path):
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise MissingInput(f"config file {p} not found")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise InvalidInputError(f"config file {p}: {e}") from None
    if not isinstance(cfg, dict):
        raise InvalidInputError("config file must hold a JSON object")
    return cfg


def _threads(args):
    if getattr(args, "reference_mode", False):
        return 1
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("LDANKIT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InvalidInputError(f"LDANKIT_THREADS must be an integer, got {env!r}") from None
    return None


@contextmanager
def _thread_limit(n):
    if n is None:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(n):
        yield


@contextmanager
def _atomic_dir(out, force):
    """Build into a sibling temp dir, then move into place."""
    out = Path(out)
    if out.exists() and not force:
        raise InvalidInputError(f"{out} already exists (use --force to replace it)")
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if out.exists():
        shutil.rmtree(out)
    tmp.rename(out)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _open_dataset(path):
    if path is None:
        raise InvalidInputError("--data is required")
    try:
        return synthgen.Dataset(path)
    except FileNotFoundError as e:
        raise MissingInput(str(e)) from None


# ---------------------------------------------------------------------------
# gen-data


def cmd_gen_data(args):
    raw = _load_config(args.config)
    cfg = synthgen.DataConfig.from_dict(raw)
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    cfg.validate()
    with _thread_limit(_threads(args)), _atomic_dir(args.out, args.force) as tmp:
        synthgen.build_dataset(cfg, tmp, overwrite=True)
        _write_json(tmp / "config.json", {"command": "gen-data", "data": cfg.to_dict()})
    print(f"dataset written to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train

CHECKPOINTS = {
    # file name -> bundle attributes stored in it
    "synthetic.ckpt": ("feat_synth", "lighting"),
    "feat_real.ckpt": ("feat_real",),
    "critic.ckpt": ("critic",),
}


def _save_bundle(bundle: ldan.ModelBundle, out: Path, meta: dict):
    from .nn.checkpoint import save_checkpoint

    variant = bundle.config.variant
    layout = dict(CHECKPOINTS)
    if variant == "real":
        layout = {"feat_real.ckpt": ("feat_real", "lighting")}
    elif variant == "model_b":
        layout = {"synthetic.ckpt": ("feat_synth", "lighting"), "critic.ckpt": ("critic",)}
    written = []
    for fname, attrs in layout.items():
        nets = {a: getattr(bundle, a) for a in attrs if getattr(bundle, a) is not None}
        if not nets:
            continue
        extra = {}
        for a in attrs:
            st = bundle.optim.get(a)
            if st is not None:
                extra.update({f"optim.{a}/{k}": v for k, v in st.arrays().items()})
                meta = {**meta, f"optim.{a}": {"kind": st.kind, "hyper": st.hyper, "steps": st.steps}}
        save_checkpoint(out / fname, nets, extra, meta)
        written.append(fname)
    return written


def load_bundle(run_dir):
    """Rebuild the inference networks of a run directory."""
    from .nn.checkpoint import load_checkpoint

    run_dir = Path(run_dir)
    cfg_path = run_dir / "config.json"
    nets = {}
    files = sorted(run_dir.glob("*.ckpt"))
    if not files or not cfg_path.exists():
        raise MissingInput(f"no checkpoint found in {run_dir}")
    for f in files:
        nets.update(load_checkpoint(f)[0])
    cfg = ldan.TrainConfig.from_dict(json.loads(cfg_path.read_text())["train"])
    if "lighting" not in nets or not ({"feat_real", "feat_synth"} & nets.keys()):
        raise MissingInput(f"{run_dir} lacks a feature or lighting network")
    S = nets.get("feat_synth", nets.get("feat_real"))
    R = nets.get("feat_real", S)
    return ldan.ModelBundle(S, R, nets["lighting"], nets.get("critic"), cfg), {f.name: _sha256(f) for f in files}


def cmd_train(args):
    raw = _load_config(args.config)
    variant = VARIANT_FLAGS.get(args.variant or raw.get("variant", "ldan").replace("_", "-"))
    if variant is None:
        raise InvalidInputError(f"unknown variant {args.variant!r}; choose from {sorted(VARIANT_FLAGS)}")
    raw = {**raw, "variant": variant}
    if args.seed is not None:
        raw["seed"] = args.seed
    raw["reference_mode"] = bool(args.reference_mode)
    cfg = ldan.TrainConfig.from_dict(raw)
    ds = _open_dataset(args.data)
    needed = ("pseudo_real_train",) if variant == "real" else ("synth_pairs", "pseudo_real_train")
    for s in needed:
        if not ds.has(s):
            raise MissingInput(f"dataset {args.data} lacks split {s!r}")
    threads = _threads(args)
    with _thread_limit(threads), _atomic_dir(args.out, args.force) as tmp:
        _write_json(tmp / "config.json", {
            "command": "train", "train": cfg.to_dict(), "data": str(Path(args.data)),
            "data_manifest_sha256": _sha256(ds.root / "manifest.json"), "threads": threads,
        })
        with open(tmp / "log.jsonl", "w") as logf:
            def sink(rec):
                logf.write(json.dumps(rec, sort_keys=True) + "\n")
                logf.flush()

            logger = ldan.Logger(cfg.reference_mode, sink)
            try:
                bundle = ldan.train(ds, cfg, logger)
            except NumericalAbortError as e:
                diag = {"error": str(e), "diagnostic": e.diagnostic, "last_log": logger.records[-5:]}
                dest = Path(str(args.out) + ".abort.json")
                dest.parent.mkdir(parents=True, exist_ok=True)
                _write_json(dest, diag)
                raise
        written = _save_bundle(bundle, tmp, {"config": cfg.to_dict()})
    print(f"trained {variant}; checkpoints: {', '.join(written)}; log: {Path(args.out) / 'log.jsonl'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args):
    from . import evaluation as ev

    if args.run is None:
        raise InvalidInputError("--run is required")
    bundle, hashes = load_bundle(args.run)
    ds = _open_dataset(args.data)
    if not ds.has("eval"):
        raise MissingInput(f"dataset {args.data} lacks the eval split")
    split = ds.split("eval")
    fold_seed = args.seed if args.seed is not None else 0
    out = Path(args.out) if args.out else Path(args.run) / "eval"
    out.mkdir(parents=True, exist_ok=True)
    with _thread_limit(_threads(args)):
        preds = ldan.predict(bundle, split.images)
    prov = {"checkpoint_sha256": hashes, "fold_seed": fold_seed, "run": str(args.run), "data": str(args.data)}
    if args.mode == "classify":
        rep = ev.classify_conditions(preds, split.condition_id, folds=args.folds, seed=fold_seed)
        _write_json(out / "classify.json", {**prov, **rep.to_dict()})
        print(f"top-1 {rep.top1[0]:.2f} +- {rep.top1[1]:.2f}  top-2 {rep.top2[0]:.2f}  top-3 {rep.top3[0]:.2f}")
    else:
        rng = np.random.default_rng(fold_seed)
        pairs = ev.verification_pairs(split.condition_id, args.pairs, rng)
        sh9 = sh_core.unproject(preds.astype(np.float64), ds.subspace)
        report = dict(prov, n_pairs=args.pairs)
        for name, values in (("euclidean", preds), ("q_measure", sh9)):
            curve = ev.roc(values, pairs, name)
            curve.write_csv(out / f"roc_{name}.csv")
            report[name] = curve.to_dict()
            print(f"{name:10s} AUC {curve.auc:.4f}  (excluded {curve.n_excluded})")
        _write_json(out / "verify.json", report)
    return EXIT_OK


# ---------------------------------------------------------------------------
# render


def parse_lighting(spec, subspace):
    """Comma-separated numbers or a JSON file; 18 values are subspace
    coordinates, 27 values (or a 3x9 nested list) are SH9 per channel."""
    try:
        vals = np.array([float(v) for v in spec.split(",")])
    except ValueError:
        vals = None
    if vals is None and "," in spec and not spec.endswith(".json"):
        raise InvalidInputError(f"malformed lighting values: {spec!r}")
    if vals is None:
        p = Path(spec)
        if not p.exists():
            raise MissingInput(f"lighting file {p} not found")
        try:
            obj = json.loads(p.read_text())
            if isinstance(obj, dict):
                obj = obj.get("sh", obj.get("projected"))
            vals = np.asarray(obj, dtype=np.float64).ravel()
        except (ValueError, TypeError) as e:
            raise InvalidInputError(f"malformed lighting file {p}: {e}") from None
    if not np.all(np.isfinite(vals)):
        raise InvalidInputError("lighting values must be finite")
    if vals.size == sh_core.N_PROJ:
        return sh_core.unproject(vals, subspace)
    if vals.size == 3 * sh_core.N_SH:
        return vals.reshape(3, sh_core.N_SH)
    raise InvalidInputError(f"lighting needs 18 or 27 values, got {vals.size}")


def render_sphere(sh, resolution):
    """Clamped shading of a unit sphere, max-normalized to 8 bit."""
    patch = synthgen.make_surface("sphere", resolution, 0, 0.0, jitter=(0.0, 0.0))
    img = np.zeros((resolution, resolution, 3))
    img[patch.mask] = sh_core.render_shading(patch.basis(), sh, patch.albedo[patch.mask], clamp=True)
    peak = img.max()
    if peak > 0:
        img = img / peak
    return np.round(img * 255).astype(np.uint8)


def cmd_render(args):
    from PIL import Image

    sub = sh_core.Subspace.load(args.subspace) if args.subspace else synthgen.default_subspace()
    sh = parse_lighting(args.light, sub)
    if args.resolution < 16:
        raise InvalidInputError("--resolution must be at least 16")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(render_sphere(sh, args.resolution), "RGB").save(out, format="PNG")
    print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck / bench


def cmd_gradcheck(args):
    from .nn import gradcheck as gc

    seeds = range(args.seeds)
    ok = True
    print(f"{'check':18s} {'max rel err':>12s}  status")
    with _thread_limit(1):
        for name, err in gc.run_suite(seeds).items():
            good = err < gc.TOLERANCE
            ok &= good
            print(f"{name:18s} {err:12.3e}  {'ok' if good else 'FAIL'}")
        for name, (got, want, diff) in gc.check_optimizers().items():
            good = diff < 1e-8
            ok &= good
            print(f"{name + ' step':18s} {diff:12.3e}  {'ok' if good else 'FAIL'}  ({got:.6e} vs {want:.6e})")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_bench(args):
    from . import evaluation as ev

    if args.run is None:
        raise InvalidInputError("--run is required")
    bundle, hashes = load_bundle(args.run)
    if args.data:
        images = _open_dataset(args.data).split("eval").images
    else:
        images = np.random.default_rng(0).random((64,) + bundle.feat_real.input_shape, dtype=np.float32)
    n_multi = _threads(args) or os.cpu_count() or 1
    rates = {}
    for label, n in (("threads=1", 1), (f"threads={n_multi}", n_multi)):
        with _thread_limit(n):
            rates[label] = ev.runtime_bench(lambda x: ldan.predict(bundle, x), images, args.n_images)
    rep = ev.BenchReport(rates, args.n_images, notes=[
        f"input shape {list(bundle.feat_real.input_shape)}",
        "context only: a GPU-trained full-size network predicted 390 images/s on CPU; "
        "an optimization-based estimator needed about 47 s per image",
    ])
    for k, v in rates.items():
        print(f"{k:12s} {v:10.1f} images/s")
    print(f"reference: {ev.REFERENCE_CPU_IMAGES_PER_SEC:.0f} images/s (CNN), "
          f"{ev.REFERENCE_SIRFS_SECONDS_PER_IMAGE:.0f} s/image (optimization baseline)")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        ev.write_json({**rep.to_dict(), "checkpoint_sha256": hashes}, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="ldankit", description="Lighting regression with label denoising.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out_required=False):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=out_required)
        p.add_argument("--threads", type=int, help="BLAS threads (fallback: LDANKIT_THREADS)")
        p.add_argument("--reference-mode", action="store_true",
                       help="single-threaded, timing-free logs for byte-identical reruns")

    p = sub.add_parser("gen-data", help="generate a dataset directory")
    common(p, out_required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one variant")
    common(p, out_required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--variant", choices=sorted(VARIANT_FLAGS))
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained run")
    common(p)
    p.add_argument("--run", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=("classify", "verify"), default="classify")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--pairs", type=int, default=2000)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="render lighting on a sphere to PNG")
    common(p, out_required=True)
    p.add_argument("--light", required=True, help="18 or 27 comma-separated values, or a JSON file")
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("--subspace", help="subspace.json (default: the built-in frontal subspace)")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("gradcheck", help="finite-difference checks of every layer")
    p.add_argument("--seeds", type=int, default=10)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="prediction throughput")
    common(p)
    p.add_argument("--run", required=True)
    p.add_argument("--data")
    p.add_argument("--n-images", type=int, default=512)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalAbortError as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (MissingInput, FileNotFoundError) as e:
        print(f"missing input: {e}", file=sys.stderr)
        return EXIT_MISSING
    except InvalidInputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
