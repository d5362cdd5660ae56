"""Data generation: Lambertian "face" surfaces, SH lighting, paired synthetic
renders, a pseudo-real split with corrupted labels, and a 19-condition
evaluation split.

Every record draws from its own child generator seeded by
``(master_seed, split, index)``, so records can be produced in any order
(or in parallel) with identical bytes.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import sh_core
from .errors import InvalidInputError
from .sh_core import N_PROJ, SHLight, Subspace

FORMAT_VERSION = 1
ABSENT_U32 = 0xFFFFFFFF
ABSENT_U16 = 0xFFFF
N_CONDITIONS = 19

SPLITS = ("synth_pairs", "pseudo_real_train", "eval")
_SPLIT_CODE = {"synth_pairs": 1, "pseudo_real_train": 2, "eval": 3, "bank": 4}

# Lambertian (clamped cosine) kernel per SH band
LAMBERT_KERNEL = np.array([math.pi] + [2 * math.pi / 3] * 3 + [math.pi / 4] * 5)


# ---------------------------------------------------------------------------
# surfaces


@dataclass
class SurfacePatch:
    normals: np.ndarray  # (H, W, 3); zero where masked
    mask: np.ndarray  # (H, W) bool, True on the surface
    albedo: np.ndarray  # (H, W, 3) in [0, 1]
    identity_seed: int
    pose_jitter: tuple  # (yaw, pitch) degrees

    @property
    def resolution(self):
        return self.mask.shape

    def basis(self) -> sh_core.BasisMatrix:
        return sh_core.BasisMatrix(sh_core.sh_basis_many(self.normals[self.mask]))


def _pixel_coords(resolution):
    h, w = resolution
    # pixel (h//2, w//2) sits exactly on the optical axis
    xs = (np.arange(w) - w // 2) / (w / 2)
    ys = -(np.arange(h) - h // 2) / (h / 2)
    return np.meshgrid(xs, ys)


def _gaussian_bump(x, y, cx, cy, sx, sy, amp):
    g = amp * np.exp(-0.5 * (((x - cx) / sx) ** 2 + ((y - cy) / sy) ** 2))
    return g, -g * (x - cx) / sx ** 2, -g * (y - cy) / sy ** 2


def _face_albedo(x, y, rng, style):
    """Skin-like base color with smooth variation and darker eyes, brows and
    mouth.  ``style="real"`` adds stronger, higher-frequency texture."""
    base = np.array([rng.uniform(0.55, 0.85), rng.uniform(0.4, 0.65), rng.uniform(0.3, 0.55)])
    alb = np.broadcast_to(base, x.shape + (3,)).copy()
    n_waves = 3 if style == "synthetic" else 6
    amp = 0.06 if style == "synthetic" else 0.10
    for _ in range(n_waves):
        fx, fy = rng.uniform(1.0, 4.0 if style == "synthetic" else 9.0, size=2)
        ph = rng.uniform(0, 2 * math.pi)
        alb *= (1.0 + amp * np.sin(fx * x + fy * y + ph))[..., None]
    eye_y = rng.uniform(0.15, 0.3)
    eye_dx = rng.uniform(0.25, 0.4)
    for sx in (-1, 1):
        g, _, _ = _gaussian_bump(x, y, sx * eye_dx, eye_y, 0.08, 0.05, 1.0)
        alb *= (1.0 - 0.6 * g)[..., None]
        g, _, _ = _gaussian_bump(x, y, sx * eye_dx, eye_y + 0.13, 0.12, 0.03, 1.0)
        alb *= (1.0 - 0.5 * g)[..., None]
    g, _, _ = _gaussian_bump(x, y, 0.0, -rng.uniform(0.35, 0.5), 0.15, 0.04, 1.0)
    alb *= (1.0 - np.array([0.2, 0.45, 0.45]) * g[..., None])
    if style == "real":
        spots = rng.random(x.shape) < 0.03
        alb[spots] *= 0.8
    return np.clip(alb, 0.0, 1.0)


def make_surface(
    kind: str,
    resolution=(32, 32),
    identity_seed: int = 0,
    pose_jitter_bound: float = sh_core.DEFAULT_JITTER_DEG,
    jitter: Optional[tuple] = None,
    albedo_style: str = "synthetic",
) -> SurfacePatch:
    """Build a surface patch.

    ``jitter`` fixes (yaw, pitch) in degrees; when omitted it is drawn
    uniformly within ``pose_jitter_bound`` from the identity's generator.
    The sphere is a unit hemisphere with constant albedo; the ellipsoid
    face varies axis ratios, a nose bump and a procedural albedo texture by
    ``identity_seed`` and is cropped to its face region.
    """
    h, w = (resolution, resolution) if np.isscalar(resolution) else tuple(resolution)
    if h < 16 or w < 16:
        raise InvalidInputError("resolution must be at least 16x16")
    rng = np.random.default_rng([identity_seed, 0x5EED])
    if jitter is None:
        jitter = tuple(float(v) for v in rng.uniform(-pose_jitter_bound, pose_jitter_bound, size=2))
    else:
        jitter = tuple(float(v) for v in jitter)
    if max(abs(jitter[0]), abs(jitter[1])) > pose_jitter_bound + 1e-12:
        raise InvalidInputError(f"pose jitter {jitter} exceeds bound {pose_jitter_bound}")
    x, y = _pixel_coords((h, w))

    if kind == "sphere":
        r2 = x * x + y * y
        mask = r2 < 1.0
        z = np.sqrt(np.clip(1.0 - r2, 0.0, None))
        n = np.stack([x, y, z], axis=-1)
        albedo = np.ones((h, w, 3))
    elif kind == "ellipsoid_face":
        a = rng.uniform(0.72, 0.9)
        b = rng.uniform(0.88, 0.98)
        c = rng.uniform(0.55, 0.85)
        u2 = (x / a) ** 2 + (y / b) ** 2
        mask = u2 < 0.82 ** 2
        root = np.sqrt(np.clip(1.0 - u2, 1e-6, None))
        dzdx = -c * x / (a * a * root)
        dzdy = -c * y / (b * b * root)
        bump, bx, by = _gaussian_bump(
            x, y, 0.0, rng.uniform(-0.05, 0.05), rng.uniform(0.07, 0.11), rng.uniform(0.15, 0.25),
            rng.uniform(0.08, 0.18),
        )
        dzdx, dzdy = dzdx + bx, dzdy + by
        for sx in (-1, 1):  # cheeks
            _, cx_, cy_ = _gaussian_bump(x, y, sx * 0.4, -0.15, 0.15, 0.15, rng.uniform(0.0, 0.06))
            dzdx, dzdy = dzdx + cx_, dzdy + cy_
        n = np.stack([-dzdx, -dzdy, np.ones_like(x)], axis=-1)
        albedo = _face_albedo(x, y, rng, albedo_style)
    else:
        raise InvalidInputError(f"unknown surface kind {kind!r}")

    n = n / np.linalg.norm(n, axis=-1, keepdims=True)
    if jitter != (0.0, 0.0):
        n = n @ sh_core.rotation(*jitter).T
    mask = mask & (n[..., 2] > 1e-3)
    n = np.where(mask[..., None], n, 0.0)
    albedo = np.where(mask[..., None], albedo, 0.0)
    return SurfacePatch(n, mask, albedo, int(identity_seed), jitter)


# ---------------------------------------------------------------------------
# lighting


def directional_sh(direction, intensity=1.0) -> np.ndarray:
    """SH9 of the irradiance from one distant source: order-2 approximation
    of ``intensity * max(0, n . d)``."""
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    return intensity * LAMBERT_KERNEL * sh_core.sh_basis_many(d[None])[0]


def ambient_sh(level) -> np.ndarray:
    """SH9 of uniform shading ``level``."""
    out = np.zeros(9)
    out[0] = level * math.sqrt(4 * math.pi)
    return out


def light_from_sources(ambient, sources) -> SHLight:
    """``ambient``: 3 levels; ``sources``: list of (direction, rgb intensity)."""
    coeffs = np.stack([ambient_sh(a) for a in ambient])
    for direction, rgb in sources:
        base = directional_sh(direction, 1.0)
        coeffs = coeffs + np.outer(rgb, base)
    return SHLight(coeffs)


def _direction(azimuth_deg, elevation_deg):
    az, el = math.radians(azimuth_deg), math.radians(elevation_deg)
    return np.array([math.sin(az) * math.cos(el), math.sin(el), math.cos(az) * math.cos(el)])


NON_DC_MIN = 1e-9


@dataclass
class LightingPrior:
    ambient: tuple = (0.25, 0.55)
    intensity: tuple = (0.45, 0.95)
    azimuth: float = 85.0
    elevation: tuple = (-35.0, 50.0)
    tint: float = 0.12
    min_sources: int = 1
    max_sources: int = 2


def sample_lighting(rng, mode="random_lowfreq", k: Optional[int] = None, prior: Optional[LightingPrior] = None,
                    subspace: Optional[Subspace] = None) -> SHLight:
    """Draw a lighting.

    ``random_lowfreq``: ambient plus 1-2 tinted directional sources in the
    frontal hemisphere; draws whose non-DC part vanishes are rejected.
    ``condition_bank``: the fixed k-th (1-based) of the 19 evaluation
    conditions; ``rng`` is ignored.
    """
    if mode == "condition_bank":
        if k is None or not 1 <= k <= N_CONDITIONS:
            raise InvalidInputError(f"condition index must be in 1..{N_CONDITIONS}")
        return condition_bank(subspace)[k - 1]
    if mode != "random_lowfreq":
        raise InvalidInputError(f"unknown lighting mode {mode!r}")
    prior = prior or LightingPrior()
    while True:
        amb_level = rng.uniform(*prior.ambient)
        amb = amb_level * (1.0 + rng.uniform(-prior.tint, prior.tint, 3) * 0.5)
        sources = []
        for _ in range(int(rng.integers(prior.min_sources, prior.max_sources + 1))):
            d = _direction(rng.uniform(-prior.azimuth, prior.azimuth), rng.uniform(*prior.elevation))
            rgb = rng.uniform(*prior.intensity) * (1.0 + rng.uniform(-prior.tint, prior.tint, 3))
            sources.append((d, rgb))
        light = light_from_sources(amb, sources)
        if np.linalg.norm(light.per_channel[:, 1:]) >= NON_DC_MIN:
            return light


# Bank geometry: flashes on a horizontal arc, like a camera-flash rig.
BANK_AZIMUTHS = np.linspace(-80.0, 80.0, N_CONDITIONS)
BANK_SEED = 19_2017
MIN_BANK_SEPARATION = 0.05


def _bank_light(k, seed):
    rng = np.random.default_rng([seed, k])
    az = BANK_AZIMUTHS[k] + rng.uniform(-2.0, 2.0)
    el = 12.0 + rng.uniform(-4.0, 4.0)
    rgb = 0.75 * (1.0 + rng.uniform(-0.04, 0.04, 3))
    return light_from_sources(np.full(3, 0.32), [(_direction(az, el), rgb)])


_BANK_CACHE = {}


def condition_bank(subspace: Optional[Subspace] = None):
    """The 19 evaluation lightings, projected with ``subspace``.

    A condition whose projected label lands within 0.05 of an earlier one is
    redrawn with the next seed.
    """
    sub = subspace or default_subspace()
    key = sub.v6.tobytes()
    if key in _BANK_CACHE:
        return [SHLight(l.per_channel.copy(), l.projected.copy()) for l in _BANK_CACHE[key]]
    bank = []
    for k in range(N_CONDITIONS):
        seed = BANK_SEED
        while True:
            light = _bank_light(k, seed).with_projection(sub)
            if all(np.linalg.norm(light.projected - o.projected) >= MIN_BANK_SEPARATION for o in bank):
                break
            seed += 1
        bank.append(light)
    _BANK_CACHE[key] = bank
    return condition_bank(sub)


_DEFAULT_SUB = []


def default_subspace() -> Subspace:
    if not _DEFAULT_SUB:
        _DEFAULT_SUB.append(sh_core.default_subspace())
    return _DEFAULT_SUB[0]


# ---------------------------------------------------------------------------
# rendering and records


IMAGE_SCALE = 1.5  # shading * albedo is divided by this before clipping to [0, 1]


@dataclass
class RealDomain:
    """Appearance differences of the pseudo-real domain."""

    gamma: float = 0.6
    noise_std: float = 0.02
    background: float = 0.25
    albedo_style: str = "real"


def render_surface(patch: SurfacePatch, light: SHLight) -> np.ndarray:
    """Clamped Lambertian render scaled into [0, 1]; returns (3, H, W) float64."""
    h, w = patch.resolution
    img = np.zeros((h, w, 3))
    shading = sh_core.render_shading(patch.basis(), light, patch.albedo[patch.mask], clamp=True)
    img[patch.mask] = shading
    return np.clip(img / IMAGE_SCALE, 0.0, 1.0).transpose(2, 0, 1)


def apply_real_domain(img: np.ndarray, mask: np.ndarray, domain: RealDomain, rng) -> np.ndarray:
    """Tone curve, background clutter and sensor noise on a (3, H, W) render."""
    out = img ** domain.gamma
    if domain.background > 0:
        h, w = mask.shape
        x, y = _pixel_coords((h, w))
        ph = rng.uniform(0, 2 * math.pi, 2)
        col = rng.uniform(0.3, 1.0, 3)
        bg = domain.background * (0.6 + 0.4 * np.sin(3 * x + ph[0]) * np.cos(2 * y + ph[1]))
        out = np.where(mask[None], out, col[:, None, None] * bg[None])
    if domain.noise_std > 0:
        out = out + rng.normal(0.0, domain.noise_std, out.shape)
    return np.clip(out, 0.0, 1.0)


@dataclass
class LabeledImage:
    image: np.ndarray  # (C, H, W)
    clean18: Optional[np.ndarray] = None
    noisy18: Optional[np.ndarray] = None
    condition_id: Optional[int] = None
    pair_id: Optional[int] = None
    index: int = 0


def render_pair(light: SHLight, seed_a: int, seed_b: int, rng, subspace: Optional[Subspace] = None,
                resolution=(32, 32), jitter_bound=sh_core.DEFAULT_JITTER_DEG, pair_id: int = 0):
    """Two identities under one lighting, each with its own pose jitter."""
    if seed_a == seed_b:
        raise InvalidInputError("a pair needs two distinct identities")
    sub = subspace or default_subspace()
    label = sh_core.project(light, sub)
    out = []
    for s in (seed_a, seed_b):
        jitter = tuple(rng.uniform(-jitter_bound, jitter_bound, 2))
        patch = make_surface("ellipsoid_face", resolution, s, jitter_bound, jitter)
        out.append(LabeledImage(render_surface(patch, light), clean18=label.copy(), pair_id=pair_id))
    return out[0], out[1]


# ---------------------------------------------------------------------------
# label noise


@dataclass
class NoiseModel:
    sigma: np.ndarray  # (18,) per-dimension std
    outlier_rate: float = 0.05
    outlier_scale: float = 5.0
    bias: np.ndarray = field(default_factory=lambda: np.zeros(N_PROJ))

    def __post_init__(self):
        self.sigma = np.broadcast_to(np.asarray(self.sigma, dtype=np.float64), (N_PROJ,)).copy()
        self.bias = np.broadcast_to(np.asarray(self.bias, dtype=np.float64), (N_PROJ,)).copy()
        if np.any(self.sigma < 0):
            raise InvalidInputError("sigma must be nonnegative")
        if not 0.0 <= self.outlier_rate <= 1.0:
            raise InvalidInputError("outlier_rate must be in [0, 1]")

    def to_dict(self):
        return {
            "sigma": self.sigma.tolist(),
            "outlier_rate": self.outlier_rate,
            "outlier_scale": self.outlier_scale,
            "bias": self.bias.tolist(),
        }


def corrupt_label(clean18, model: NoiseModel, rng) -> np.ndarray:
    """``clean + bias + e`` with ``e ~ N(0, sigma^2)``, scaled by
    ``outlier_scale`` with probability ``outlier_rate``."""
    clean = np.asarray(clean18, dtype=np.float64)
    e = rng.normal(0.0, 1.0, clean.shape) * model.sigma
    if rng.random() < model.outlier_rate:
        e = e * model.outlier_scale
    return clean + model.bias + e


# ---------------------------------------------------------------------------
# dataset config and builder


@dataclass
class DataConfig:
    n_pairs: int = 2000
    n_real: int = 4000
    n_eval_ids: int = 20
    resolution: int = 32
    master_seed: int = 0
    jitter_bound: float = sh_core.DEFAULT_JITTER_DEG
    noise_sigma_frac: float = 0.3
    outlier_rate: float = 0.05
    outlier_scale: float = 5.0
    noise_bias_frac: float = 0.05
    real_gamma: float = 0.6
    real_noise_std: float = 0.02
    real_background: float = 0.25

    def validate(self):
        if self.n_pairs < 1 or self.n_real < 1 or self.n_eval_ids < 1:
            raise InvalidInputError("record counts must be positive")
        if self.resolution < 16:
            raise InvalidInputError("resolution must be at least 16")
        if not 0.0 <= self.outlier_rate <= 1.0:
            raise InvalidInputError("outlier_rate must be in [0, 1]")
        if self.noise_sigma_frac < 0:
            raise InvalidInputError("noise_sigma_frac must be nonnegative")
        return self

    @property
    def real_domain(self):
        return RealDomain(self.real_gamma, self.real_noise_std, self.real_background)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def _record_rng(master_seed, split, index):
    return np.random.default_rng([master_seed, _SPLIT_CODE[split], index])


# identity seeds are disjoint per split so eval faces are never trained on
_ID_BASE = {"synth_pairs": 1_000_000, "pseudo_real_train": 2_000_000, "eval": 3_000_000}


def make_synth_pair(cfg: DataConfig, pair_index: int, sub: Subspace):
    rng = _record_rng(cfg.master_seed, "synth_pairs", pair_index)
    light = sample_lighting(rng)
    base = _ID_BASE["synth_pairs"] + cfg.master_seed * 10_000_000
    ids = rng.choice(100_000, size=2, replace=False)
    a, b = render_pair(light, base + int(ids[0]), base + int(ids[1]), rng, sub,
                       (cfg.resolution, cfg.resolution), cfg.jitter_bound, pair_index)
    a.index, b.index = 2 * pair_index, 2 * pair_index + 1
    return a, b


def _real_render(cfg, identity, light, rng):
    jitter = tuple(rng.uniform(-cfg.jitter_bound, cfg.jitter_bound, 2))
    dom = cfg.real_domain
    patch = make_surface("ellipsoid_face", cfg.resolution, identity, cfg.jitter_bound, jitter,
                         albedo_style=dom.albedo_style)
    return apply_real_domain(render_surface(patch, light), patch.mask, dom, rng)


def make_real_clean(cfg: DataConfig, index: int, sub: Subspace):
    """Pseudo-real image and its clean label, before label corruption."""
    rng = _record_rng(cfg.master_seed, "pseudo_real_train", index)
    light = sample_lighting(rng)
    identity = _ID_BASE["pseudo_real_train"] + cfg.master_seed * 10_000_000 + int(rng.integers(100_000))
    img = _real_render(cfg, identity, light, rng)
    return LabeledImage(img, clean18=sh_core.project(light, sub), index=index), rng


def make_eval_record(cfg: DataConfig, condition: int, ident: int, sub: Subspace):
    """``condition`` is 0-based; identities are shared across conditions."""
    index = condition * cfg.n_eval_ids + ident
    rng = _record_rng(cfg.master_seed, "eval", index)
    light = condition_bank(sub)[condition]
    identity = _ID_BASE["eval"] + cfg.master_seed * 10_000_000 + ident
    img = _real_render(cfg, identity, light, rng)
    return LabeledImage(img, clean18=light.projected.copy(), condition_id=condition, index=index)


def default_noise_model(clean_labels: np.ndarray, cfg: DataConfig) -> NoiseModel:
    std = clean_labels.std(axis=0)
    return NoiseModel(
        sigma=cfg.noise_sigma_frac * std,
        outlier_rate=cfg.outlier_rate,
        outlier_scale=cfg.outlier_scale,
        bias=cfg.noise_bias_frac * std,
    )


# ---------------------------------------------------------------------------
# binary record format


_HEAD = struct.Struct("<IIHB")
FLAG_CLEAN = 1
FLAG_NOISY = 2


def encode_record(rec: LabeledImage) -> bytes:
    flags = (FLAG_CLEAN if rec.clean18 is not None else 0) | (FLAG_NOISY if rec.noisy18 is not None else 0)
    parts = [
        _HEAD.pack(
            rec.index,
            ABSENT_U32 if rec.pair_id is None else rec.pair_id,
            ABSENT_U16 if rec.condition_id is None else rec.condition_id,
            flags,
        ),
        np.ascontiguousarray(rec.image, dtype="<f4").tobytes(),
    ]
    if rec.clean18 is not None:
        parts.append(np.asarray(rec.clean18, dtype="<f4").tobytes())
    if rec.noisy18 is not None:
        parts.append(np.asarray(rec.noisy18, dtype="<f4").tobytes())
    return b"".join(parts)


def write_records(path, records) -> int:
    n = 0
    with open(path, "wb") as f:
        for r in records:
            f.write(encode_record(r))
            n += 1
    return n


@dataclass
class Split:
    """Columnar view of one split's records."""

    index: np.ndarray
    images: np.ndarray  # (N, C, H, W) float32
    clean18: Optional[np.ndarray]
    noisy18: Optional[np.ndarray]
    condition_id: Optional[np.ndarray]
    pair_id: Optional[np.ndarray]

    def __len__(self):
        return len(self.index)


def read_records(path, image_shape) -> Split:
    """Parse a ``records.bin``; ``image_shape`` is (C, H, W)."""
    data = Path(path).read_bytes()
    n_img = int(np.prod(image_shape))
    off = 0
    idx, imgs, clean, noisy, cond, pair = [], [], [], [], [], []
    while off < len(data):
        need = _HEAD.size + 4 * n_img
        if off + need <= len(data):
            flags = data[off + _HEAD.size - 1]
            need += 4 * N_PROJ * (bool(flags & FLAG_CLEAN) + bool(flags & FLAG_NOISY))
        if off + need > len(data):
            raise InvalidInputError(f"{path}: truncated record at byte {off}")
        i, p, c, flags = _HEAD.unpack_from(data, off)
        off += _HEAD.size
        imgs.append(np.frombuffer(data, "<f4", n_img, off).reshape(image_shape))
        off += 4 * n_img
        cl = nz = None
        if flags & FLAG_CLEAN:
            cl = np.frombuffer(data, "<f4", N_PROJ, off)
            off += 4 * N_PROJ
        if flags & FLAG_NOISY:
            nz = np.frombuffer(data, "<f4", N_PROJ, off)
            off += 4 * N_PROJ
        idx.append(i)
        pair.append(None if p == ABSENT_U32 else p)
        cond.append(None if c == ABSENT_U16 else c)
        clean.append(cl)
        noisy.append(nz)

    def stack(vals, dtype):
        if not vals or any(v is None for v in vals):
            return None
        return np.array(vals, dtype=dtype)

    return Split(
        index=np.array(idx, dtype=np.int64),
        images=np.stack(imgs).astype(np.float32) if imgs else np.empty((0,) + tuple(image_shape), np.float32),
        clean18=stack(clean, np.float32),
        noisy18=stack(noisy, np.float32),
        condition_id=stack(cond, np.int64),
        pair_id=stack(pair, np.int64),
    )


def build_dataset(cfg: DataConfig, out_dir, subspace: Optional[Subspace] = None, overwrite: bool = False) -> Path:
    """Generate all three splits under ``out_dir`` and write the manifest."""
    cfg.validate()
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not overwrite:
        raise InvalidInputError(f"{out} exists and is not empty")
    out.mkdir(parents=True, exist_ok=True)
    sub = subspace or default_subspace()
    sub.save(out / "subspace.json")

    def synth():
        for i in range(cfg.n_pairs):
            yield from make_synth_pair(cfg, i, sub)

    (out / "synth_pairs").mkdir(exist_ok=True)
    n_synth = write_records(out / "synth_pairs" / "records.bin", synth())

    real = [make_real_clean(cfg, i, sub) for i in range(cfg.n_real)]
    clean = np.array([r.clean18 for r, _ in real])
    noise = default_noise_model(clean, cfg)
    for rec, rng in real:
        rec.noisy18 = corrupt_label(rec.clean18, noise, rng)
    (out / "pseudo_real_train").mkdir(exist_ok=True)
    n_real = write_records(out / "pseudo_real_train" / "records.bin", (r for r, _ in real))

    def evals():
        for c in range(N_CONDITIONS):
            for j in range(cfg.n_eval_ids):
                yield make_eval_record(cfg, c, j, sub)

    (out / "eval").mkdir(exist_ok=True)
    n_eval = write_records(out / "eval" / "records.bin", evals())

    manifest = {
        "format_version": FORMAT_VERSION,
        "config": cfg.to_dict(),
        "master_seed": cfg.master_seed,
        "image_shape": [3, cfg.resolution, cfg.resolution],
        "counts": {"synth_pairs": n_synth, "pseudo_real_train": n_real, "eval": n_eval},
        "seeds": {
            "record_seed": "numpy default_rng([master_seed, split_code, record_index])",
            "split_codes": {k: v for k, v in _SPLIT_CODE.items() if k in SPLITS},
            "bank_seed": BANK_SEED,
        },
        "noise_model": noise.to_dict(),
        "subspace": "subspace.json",
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out


class Dataset:
    """Read access to a generated dataset directory.

    ``accessed`` records which splits were loaded, so trainers can be
    audited for touching data they should not.
    """

    def __init__(self, root):
        self.root = Path(root)
        mpath = self.root / "manifest.json"
        if not mpath.exists():
            raise FileNotFoundError(f"{mpath} not found")
        self.manifest = json.loads(mpath.read_text())
        self.image_shape = tuple(self.manifest["image_shape"])
        self.subspace = Subspace.load(self.root / self.manifest["subspace"])
        self.accessed = set()
        self._cache = {}

    def has(self, split):
        return (self.root / split / "records.bin").exists()

    def split(self, name) -> Split:
        if name not in SPLITS:
            raise InvalidInputError(f"unknown split {name!r}")
        if not self.has(name):
            raise FileNotFoundError(f"split {name!r} missing under {self.root}")
        self.accessed.add(name)
        if name not in self._cache:
            self._cache[name] = read_records(self.root / name / "records.bin", self.image_shape)
        return self._cache[name]
