"""Training procedures: synthetic pretraining, adversarial label denoising,
the direct-regression baseline, the shared/joint feature-net variants (B, C)
and the two ablations.

Loss terms use mean-squared errors (averaged over batch and dimensions) and
are weighted by ``nu`` (synthetic regression), ``lam`` (paired feature
loss) and ``mu`` (noisy real regression).
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import models
from .errors import InvalidInputError, NumericalAbortError
from .nn import Network, backward, critic_losses, mse_loss
from .nn.optim import OptimState, adadelta, adadelta_step, clip_weights, rmsprop, rmsprop_step
from .sh_core import unproject

VARIANTS = ("ldan", "real", "model_b", "model_c", "no_gan", "no_regression")


@dataclass
class TrainConfig:
    mu: float = 50.0
    nu: float = 50.0
    lam: float = 0.5
    critic_epochs: int = 5
    featnet_epochs: int = 2
    lighting_epochs: int = 2
    outer_iters: int = 50
    synth_epochs: int = 20
    real_epochs: int = 30
    batch_size: int = 64
    clip_c: float = 0.01
    rmsprop_lr: float = 5e-5
    adadelta_rho: float = 0.95
    adadelta_eps: float = 1e-6
    seed: int = 0
    variant: str = "ldan"
    widths: tuple = (16, 32, 64)
    blocks_per_stage: int = 2
    critic_hidden: tuple = (128, 128)
    freeze_bn_stats: bool = True
    reference_mode: bool = True

    def __post_init__(self):
        self.widths = tuple(self.widths)
        self.critic_hidden = tuple(self.critic_hidden)
        if self.variant not in VARIANTS:
            raise InvalidInputError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.variant == "no_regression":
            self.mu = 0.0
        for k in ("critic_epochs", "featnet_epochs", "lighting_epochs", "outer_iters", "batch_size"):
            if getattr(self, k) < 1:
                raise InvalidInputError(f"{k} must be >= 1")

    def to_dict(self):
        d = asdict(self)
        d["widths"] = list(self.widths)
        d["critic_hidden"] = list(self.critic_hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class ModelBundle:
    """Trained networks plus optimizer states and the per-step loss log.

    ``feat_real is feat_synth`` for Model B (one shared parameter set).
    """

    feat_synth: Network
    feat_real: Network
    lighting: Network
    critic: Optional[Network]
    config: TrainConfig
    optim: dict = field(default_factory=dict)
    log: list = field(default_factory=list)

    def networks(self):
        nets = {"feat_synth": self.feat_synth, "lighting": self.lighting}
        if self.feat_real is not self.feat_synth:
            nets["feat_real"] = self.feat_real
        if self.critic is not None:
            nets["critic"] = self.critic
        return nets


class Logger:
    """Collects loss records; optionally streams them to ``sink``.

    In reference mode ``wall_time`` is recorded as ``None`` so logs are
    byte-reproducible.
    """

    def __init__(self, reference_mode=True, sink: Optional[Callable[[dict], None]] = None):
        self.reference_mode = reference_mode
        self.sink = sink
        self.records = []
        self.t0 = time.perf_counter()

    def __call__(self, **rec):
        rec["wall_time"] = None if self.reference_mode else round(time.perf_counter() - self.t0, 3)
        for k, v in rec.items():
            if isinstance(v, (np.floating, float)):
                if not np.isfinite(v):
                    raise NumericalAbortError(f"non-finite {k} in phase {rec.get('phase')}", rec)
                rec[k] = float(v)
        self.records.append(rec)
        if self.sink is not None:
            self.sink(rec)


# ---------------------------------------------------------------------------
# network construction


def _opt(cfg: TrainConfig) -> OptimState:
    return adadelta(rho=cfg.adadelta_rho, eps=cfg.adadelta_eps)


def new_feature_net(cfg: TrainConfig, image_shape, seed_offset=0, name="feat") -> Network:
    return Network(
        models.feature_net_specs(cfg.widths, cfg.blocks_per_stage, models.FEATURE_DIM),
        image_shape, np.float32, seed=cfg.seed * 100 + 1 + seed_offset, name=name,
    )


def new_lighting_net(cfg: TrainConfig) -> Network:
    return Network(models.lighting_net_specs(), (models.FEATURE_DIM,), np.float32, seed=cfg.seed * 100 + 11,
                   name="lighting")


def new_critic(cfg: TrainConfig) -> Network:
    net = Network(models.critic_specs(cfg.critic_hidden), (models.FEATURE_DIM,), np.float32,
                  seed=cfg.seed * 100 + 21, name="critic")
    clip_weights(net.named_params(), cfg.clip_c)
    return net


def _rng(cfg: TrainConfig, stream: int):
    return np.random.default_rng([cfg.seed, stream])


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _check_loss(value, phase, **context):
    if not np.isfinite(value):
        raise NumericalAbortError(f"non-finite loss in {phase}", {"phase": phase, **context})


def pair_indices(split):
    """``(n_pairs, 2)`` record positions of the two members of each pair."""
    if split.pair_id is None or split.clean18 is None:
        raise InvalidInputError("synthetic pairs need pair_id and clean labels on every record")
    order = np.lexsort((split.index, split.pair_id))
    pid = split.pair_id[order]
    if len(pid) % 2 or np.any(pid[0::2] != pid[1::2]) or np.any(np.diff(pid[0::2]) == 0):
        raise InvalidInputError("every pair_id must occur exactly twice")
    pairs = order.reshape(-1, 2)
    if not np.array_equal(split.clean18[pairs[:, 0]], split.clean18[pairs[:, 1]]):
        raise InvalidInputError("paired records must share clean18")
    return pairs


# ---------------------------------------------------------------------------
# synthetic pretraining


def train_synthetic(pairs_split, cfg: TrainConfig, image_shape=None, log: Optional[Logger] = None,
                    feat: Optional[Network] = None, lighting: Optional[Network] = None):
    """Fit S and L on paired synthetic renders with Adadelta.

    Per batch of pairs the loss is
    ``nu*(mse(L(S(s_i)), y) + mse(L(S(s_j)), y)) + lam*mse(S(s_i), S(s_j))``.
    Returns ``(S, L, final_epoch_loss)``.
    """
    log = log or Logger(cfg.reference_mode)
    pairs = pair_indices(pairs_split)
    images, labels = pairs_split.images, pairs_split.clean18
    image_shape = image_shape or images.shape[1:]
    S = feat or new_feature_net(cfg, image_shape, name="feat_synth")
    L = lighting or new_lighting_net(cfg)
    opt_s, opt_l = _opt(cfg), _opt(cfg)
    rng = _rng(cfg, 1)
    nb = max(1, cfg.batch_size // 2)
    epoch_loss = float("nan")
    for epoch in range(cfg.synth_epochs):
        tot = np.zeros(3)
        count = 0
        for bidx in _batches(len(pairs), nb, rng):
            pi, pj = pairs[bidx, 0], pairs[bidx, 1]
            m = len(bidx)
            x = np.concatenate([images[pi], images[pj]])
            y = labels[pi]
            f, tape_s = S.forward(x, "train", rng)
            pred, tape_l = L.forward(f, "train", rng)
            reg_i, g_i = mse_loss(pred[:m], y)
            reg_j, g_j = mse_loss(pred[m:], y)
            feat_l, g_f = mse_loss(f[:m], f[m:])
            loss = cfg.nu * (reg_i + reg_j) + cfg.lam * feat_l
            _check_loss(loss, "train_synthetic", epoch=epoch)
            g_pred = cfg.nu * np.concatenate([g_i, g_j])
            g_feat, grads_l = backward(tape_l, g_pred)
            g_feat = g_feat + cfg.lam * np.concatenate([g_f, -g_f])
            _, grads_s = backward(tape_s, g_feat)
            adadelta_step(opt_s, S.named_params(), S.named_grads(grads_s))
            adadelta_step(opt_l, L.named_params(), L.named_grads(grads_l))
            tot += (loss * m, (reg_i + reg_j) * m, feat_l * m)
            count += m
        tot /= count
        epoch_loss = float(tot[0])
        log(phase="synthetic", epoch=epoch, loss=tot[0], reg_synth=tot[1], feature_loss=tot[2])
    return S, L, epoch_loss, {"feat_synth": opt_s, "lighting": opt_l}


def precompute_synth_features(S: Network, images) -> np.ndarray:
    """Infer-mode features for every synthetic image."""
    return S.predict(images)


# ---------------------------------------------------------------------------
# adversarial pieces


def train_critic_epochs(D: Network, f_synth, f_real, k: int, cfg: TrainConfig, state: OptimState,
                        rng, log: Optional[Logger] = None, iteration: int = 0):
    """``k`` epochs maximizing ``mean D(f_s) - mean D(f_r)`` with RMSProp,
    clipping every critic weight to ``[-clip_c, clip_c]`` after each update.

    ``f_real`` holds the (frozen) real-side features; an epoch is one pass
    over them, each batch paired with a random synthetic batch.
    """
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    log = log or Logger(cfg.reference_mode)
    params = D.named_params()
    epoch_means = []
    for epoch in range(k):
        objs = []
        for bidx in _batches(len(f_real), cfg.batch_size, rng):
            sidx = rng.integers(0, len(f_synth), size=len(bidx))
            ds, tape_s = D.forward(f_synth[sidx], "train", rng)
            dr, tape_r = D.forward(f_real[bidx], "train", rng)
            cl = critic_losses(ds, dr)
            _check_loss(cl.critic_objective, "train_critic", iteration=iteration, epoch=epoch)
            _, gs = backward(tape_s, cl.critic_grad_synth)
            _, gr = backward(tape_r, cl.critic_grad_real)
            grads = {kk: a + b for (kk, a), b in zip(D.named_grads(gs).items(), D.named_grads(gr).values())}
            rmsprop_step(state, params, grads)
            clip_weights(params, cfg.clip_c)
            objs.append(cl.critic_objective)
        epoch_means.append(float(np.mean(objs)))
        log(phase="critic", iteration=iteration, epoch=epoch, critic_objective=epoch_means[-1])
    return D, epoch_means


def _frozen_grad_through(net: Network, f, g_out):
    """Forward ``net`` in infer mode on ``f`` and pull ``g_out`` back to ``f``."""
    out, tape = net.forward(f, "infer")
    gf, _ = backward(tape, g_out)
    return out, gf


def train_featnet_epochs(R: Network, D: Optional[Network], L: Network, images, noisy, k: int, mu: float,
                         cfg: TrainConfig, state: OptimState, rng, log: Optional[Logger] = None,
                         iteration: int = 0, use_gan: bool = True):
    """``k`` epochs minimizing ``-mean D(R(r)) + mu*mse(L(R(r)), y_noisy)``
    by Adadelta; only R's parameters change.  L and D run in infer mode."""
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    log = log or Logger(cfg.reference_mode)
    mode = "infer" if cfg.freeze_bn_stats else "train"
    params = R.named_params()
    history = []
    for epoch in range(k):
        tot = np.zeros(2)
        count = 0
        for bidx in _batches(len(images), cfg.batch_size, rng):
            f, tape_r = R.forward(images[bidx], mode, rng)
            g_f = np.zeros_like(f)
            reg = 0.0
            if mu > 0:
                pred, tape_l = L.forward(f, "infer")
                reg, g_pred = mse_loss(pred, noisy[bidx])
                _check_loss(reg, "train_featnet", iteration=iteration, epoch=epoch)
                g_f += backward(tape_l, mu * g_pred)[0]
            gan = 0.0
            if use_gan and D is not None:
                dr, tape_d = D.forward(f, "infer")
                cl = critic_losses(dr, dr)
                gan = cl.generator_objective
                g_f += backward(tape_d, cl.generator_grad_real)[0]
            loss = gan + mu * reg
            _check_loss(loss, "train_featnet", iteration=iteration, epoch=epoch)
            _, grads = backward(tape_r, g_f)
            adadelta_step(state, params, R.named_grads(grads))
            tot += (reg * len(bidx), gan * len(bidx))
            count += len(bidx)
        tot /= count
        history.append(tuple(tot))
        log(phase="featnet", iteration=iteration, epoch=epoch, reg_real=tot[0], gan=tot[1])
    return R, history


# ---------------------------------------------------------------------------
# full procedures


def train_ldan(dataset, cfg: TrainConfig, log: Optional[Logger] = None, pretrained=None) -> ModelBundle:
    """Synthetic pretraining, then alternating critic / real feature-net
    epochs with S and L frozen.  ``pretrained`` may supply ``(S, L)`` from an
    earlier `train_synthetic` run with the same config to skip step one.

    Variants: ``no_gan`` drops the critic and the adversarial term;
    ``no_regression`` sets ``mu = 0``.
    """
    if cfg.variant not in ("ldan", "no_gan", "no_regression"):
        raise InvalidInputError(f"train_ldan cannot run variant {cfg.variant!r}")
    log = log or Logger(cfg.reference_mode)
    synth = dataset.split("synth_pairs")
    real = dataset.split("pseudo_real_train")
    if real.noisy18 is None:
        raise InvalidInputError("pseudo_real_train needs noisy labels")
    if pretrained is None:
        S, L, _, optim = train_synthetic(synth, cfg, dataset.image_shape, log)
    else:
        S, L = pretrained[0].copy("feat_synth"), pretrained[1].copy("lighting")
        optim = {}
    f_s = precompute_synth_features(S, synth.images)
    R = S.copy("feat_real")
    use_gan = cfg.variant != "no_gan"
    D = new_critic(cfg) if use_gan else None
    opt_d, opt_r = rmsprop(lr=cfg.rmsprop_lr), _opt(cfg)
    rng = _rng(cfg, 2)
    for it in range(cfg.outer_iters):
        if use_gan:
            f_r = R.predict(real.images)
            train_critic_epochs(D, f_s, f_r, cfg.critic_epochs, cfg, opt_d, rng, log, it)
        train_featnet_epochs(R, D, L, real.images, real.noisy18, cfg.featnet_epochs, cfg.mu, cfg, opt_r,
                             rng, log, it, use_gan)
    optim.update({"feat_real": opt_r})
    if use_gan:
        optim["critic"] = opt_d
    return ModelBundle(S, R, L, D, cfg, optim, log.records)


def train_real_baseline(dataset, cfg: TrainConfig, log: Optional[Logger] = None) -> ModelBundle:
    """Fresh feature and lighting nets fit end to end on noisy labels with
    ``mu * mse`` by Adadelta.  Reads only the pseudo-real split."""
    log = log or Logger(cfg.reference_mode)
    real = dataset.split("pseudo_real_train")
    R = new_feature_net(cfg, dataset.image_shape, name="feat_real")
    L = new_lighting_net(cfg)
    opt_r, opt_l = _opt(cfg), _opt(cfg)
    rng = _rng(cfg, 3)
    for epoch in range(cfg.real_epochs):
        tot, count = 0.0, 0
        for bidx in _batches(len(real), cfg.batch_size, rng):
            f, tape_r = R.forward(real.images[bidx], "train", rng)
            pred, tape_l = L.forward(f, "train", rng)
            reg, g = mse_loss(pred, real.noisy18[bidx])
            _check_loss(reg, "train_real", epoch=epoch)
            gf, grads_l = backward(tape_l, cfg.mu * g)
            _, grads_r = backward(tape_r, gf)
            adadelta_step(opt_r, R.named_params(), R.named_grads(grads_r))
            adadelta_step(opt_l, L.named_params(), L.named_grads(grads_l))
            tot += reg * len(bidx)
            count += len(bidx)
        log(phase="real", epoch=epoch, reg_real=tot / count)
    return ModelBundle(R, R, L, None, cfg, {"feat_real": opt_r, "lighting": opt_l}, log.records)


def _train_joint(dataset, cfg: TrainConfig, shared: bool, log: Optional[Logger]) -> ModelBundle:
    log = log or Logger(cfg.reference_mode)
    synth = dataset.split("synth_pairs")
    real = dataset.split("pseudo_real_train")
    pairs = pair_indices(synth)
    S = new_feature_net(cfg, dataset.image_shape, name="feat_synth")
    R = S if shared else new_feature_net(cfg, dataset.image_shape, seed_offset=50, name="feat_real")
    L = new_lighting_net(cfg)
    D = new_critic(cfg)
    opt_d, opt_l, opt_s = rmsprop(lr=cfg.rmsprop_lr), _opt(cfg), _opt(cfg)
    opt_r = opt_s if shared else _opt(cfg)
    rng = _rng(cfg, 4)
    nb = max(1, cfg.batch_size // 2)
    for it in range(cfg.outer_iters):
        # critic on current features of both domains
        f_s = S.predict(synth.images)
        f_r = R.predict(real.images)
        train_critic_epochs(D, f_s, f_r, cfg.critic_epochs, cfg, opt_d, rng, log, it)

        # lighting net on synthetic pairs only: L(S(s_i)) and L(R(s_j))
        fi = f_s[pairs[:, 0]]
        fj = R.predict(synth.images[pairs[:, 1]]) if not shared else f_s[pairs[:, 1]]
        y = synth.clean18[pairs[:, 0]]
        for epoch in range(cfg.lighting_epochs):
            tot, count = 0.0, 0
            for bidx in _batches(len(pairs), nb, rng):
                m = len(bidx)
                pred, tape = L.forward(np.concatenate([fi[bidx], fj[bidx]]), "train", rng)
                ri, gi = mse_loss(pred[:m], y[bidx])
                rj, gj = mse_loss(pred[m:], y[bidx])
                _check_loss(ri + rj, "train_lighting", iteration=it, epoch=epoch)
                _, grads = backward(tape, cfg.nu * np.concatenate([gi, gj]))
                adadelta_step(opt_l, L.named_params(), L.named_grads(grads))
                tot += cfg.nu * (ri + rj) * m
                count += m
            log(phase="lighting", iteration=it, epoch=epoch, reg_synth=tot / count)

        # feature nets on the full objective, L and D frozen
        for epoch in range(cfg.featnet_epochs):
            tot = np.zeros(4)
            count = 0
            for bidx in _batches(len(real), cfg.batch_size, rng):
                sb = pairs[rng.integers(0, len(pairs), size=nb)]
                m = len(sb)
                xs = np.concatenate([synth.images[sb[:, 0]], synth.images[sb[:, 1]]])
                ys = synth.clean18[sb[:, 0]]
                fs, tape_s = S.forward(xs, "train", rng)
                fr, tape_r = R.forward(real.images[bidx], "train", rng)
                # synthetic side: regression, paired feature loss, +mean D(S(s))
                ps, tape_ls = L.forward(fs, "infer")
                ri, gi = mse_loss(ps[:m], ys)
                rj, gj = mse_loss(ps[m:], ys)
                fl, gfl = mse_loss(fs[:m], fs[m:])
                g_fs = backward(tape_ls, cfg.nu * np.concatenate([gi, gj]))[0]
                g_fs += cfg.lam * np.concatenate([gfl, -gfl])
                ds, tape_ds = D.forward(fs, "infer")
                dr, tape_dr = D.forward(fr, "infer")
                cl = critic_losses(ds, dr)
                g_fs += backward(tape_ds, -cl.critic_grad_synth)[0]
                # real side: -mean D(R(r)) + mu * regression
                pr, tape_lr = L.forward(fr, "infer")
                rr, gr = mse_loss(pr, real.noisy18[bidx])
                g_fr = backward(tape_lr, cfg.mu * gr)[0]
                g_fr += backward(tape_dr, cl.generator_grad_real)[0]
                loss = cl.critic_objective + cfg.mu * rr + cfg.nu * (ri + rj) + cfg.lam * fl
                _check_loss(loss, "train_joint", iteration=it, epoch=epoch)
                _, grads_s = backward(tape_s, g_fs)
                _, grads_r = backward(tape_r, g_fr)
                gs = S.named_grads(grads_s)
                gr_named = R.named_grads(grads_r)
                if shared:
                    adadelta_step(opt_s, S.named_params(), {k: gs[k] + gr_named[k] for k in gs})
                else:
                    adadelta_step(opt_s, S.named_params(), gs)
                    adadelta_step(opt_r, R.named_params(), gr_named)
                tot += (rr * len(bidx), (ri + rj) * len(bidx), fl * len(bidx), cl.critic_objective * len(bidx))
                count += len(bidx)
            tot /= count
            log(phase="joint", iteration=it, epoch=epoch, reg_real=tot[0], reg_synth=tot[1],
                feature_loss=tot[2], gan=tot[3])
    optim = {"feat_synth": opt_s, "lighting": opt_l, "critic": opt_d}
    if not shared:
        optim["feat_real"] = opt_r
    return ModelBundle(S, R, L, D, cfg, optim, log.records)


def train_model_b(dataset, cfg: TrainConfig, log: Optional[Logger] = None) -> ModelBundle:
    """One feature net shared by synthetic and real data."""
    return _train_joint(dataset, replace(cfg, variant="model_b"), True, log)


def train_model_c(dataset, cfg: TrainConfig, log: Optional[Logger] = None) -> ModelBundle:
    """Separate synthetic and real feature nets trained jointly."""
    return _train_joint(dataset, replace(cfg, variant="model_c"), False, log)


def train(dataset, cfg: TrainConfig, log: Optional[Logger] = None, pretrained=None) -> ModelBundle:
    if cfg.variant in ("ldan", "no_gan", "no_regression"):
        return train_ldan(dataset, cfg, log, pretrained)
    if cfg.variant == "real":
        return train_real_baseline(dataset, cfg, log)
    if cfg.variant == "model_b":
        return train_model_b(dataset, cfg, log)
    return train_model_c(dataset, cfg, log)


def predict(bundle: ModelBundle, images, subspace=None, batch_size=256):
    """``L(R(x))`` in infer mode; with ``subspace`` also returns the
    unprojected (N, 3, 9) coefficients."""
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[None]
    if images.shape[1:] != bundle.feat_real.input_shape:
        raise InvalidInputError(
            f"image shape {images.shape[1:]} does not match {bundle.feat_real.input_shape}"
        )
    out = bundle.lighting.predict(bundle.feat_real.predict(images, batch_size), batch_size)
    if subspace is None:
        return out
    return out, unproject(out.astype(np.float64), subspace)
