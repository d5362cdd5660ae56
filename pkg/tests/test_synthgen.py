import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldankit import sh_core, synthgen as sg
from ldankit.errors import InvalidInputError

SMALL = sg.DataConfig(n_pairs=12, n_real=30, n_eval_ids=10, resolution=16, master_seed=3)


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    return sg.build_dataset(SMALL, tmp_path_factory.mktemp("ds") / "d")


def test_sphere_geometry():
    p = sg.make_surface("sphere", 32, 0, 0.0)
    assert np.allclose(p.normals[16, 16], [0, 0, 1])
    n = p.normals[p.mask]
    np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1, atol=1e-6)
    assert np.all(n[:, 2] > 0)


@given(st.integers(0, 10**6))
@settings(max_examples=20, deadline=None)
def test_face_surface_invariants(seed):
    p = sg.make_surface("ellipsoid_face", 16, seed, 15.0)
    n = p.normals[p.mask]
    np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1, atol=1e-6)
    assert np.all(n[:, 2] > 0)
    assert max(abs(v) for v in p.pose_jitter) <= 15.0
    assert p.albedo.min() >= 0 and p.albedo.max() <= 1


def test_surface_determinism_and_identity_variation():
    a = sg.make_surface("ellipsoid_face", 32, 11, 15.0)
    b = sg.make_surface("ellipsoid_face", 32, 11, 15.0)
    np.testing.assert_array_equal(a.normals, b.normals)
    np.testing.assert_array_equal(a.albedo, b.albedo)
    c = sg.make_surface("ellipsoid_face", 32, 12, 15.0)
    both = a.mask & c.mask
    differ = np.abs(a.albedo[both] - c.albedo[both]).max(axis=1) > 0.05
    assert differ.mean() >= 0.10


def test_surface_errors():
    with pytest.raises(InvalidInputError):
        sg.make_surface("sphere", 8)
    with pytest.raises(InvalidInputError):
        sg.make_surface("cube", 16)
    with pytest.raises(InvalidInputError):
        sg.make_surface("sphere", 16, 0, 5.0, jitter=(10.0, 0.0))


def test_random_lighting_has_non_dc_energy():
    rng = np.random.default_rng(0)
    for _ in range(50):
        light = sg.sample_lighting(rng)
        assert np.linalg.norm(light.per_channel[:, 1:]) >= sg.NON_DC_MIN


def test_ambient_only_prior_is_rejected_then_resampled():
    rng = np.random.default_rng(0)
    amb = sg.light_from_sources([0.5] * 3, [])
    assert np.linalg.norm(amb.per_channel[:, 1:]) < 1e-9
    light = sg.sample_lighting(rng, prior=sg.LightingPrior(min_sources=0, max_sources=1))
    assert np.linalg.norm(light.per_channel[:, 1:]) >= sg.NON_DC_MIN


def test_condition_bank_fixed_and_separated():
    a = sg.sample_lighting(None, "condition_bank", k=4)
    b = sg.sample_lighting(np.random.default_rng(5), "condition_bank", k=4)
    np.testing.assert_array_equal(a.per_channel, b.per_channel)
    bank = sg.condition_bank()
    assert len(bank) == sg.N_CONDITIONS
    for i in range(len(bank)):
        for j in range(i):
            assert np.linalg.norm(bank[i].projected - bank[j].projected) >= sg.MIN_BANK_SEPARATION
    with pytest.raises(InvalidInputError):
        sg.sample_lighting(None, "condition_bank", k=20)


def test_frontal_light_peaks_at_center():
    p = sg.make_surface("sphere", 33, 0, 0.0)
    img = sg.render_surface(p, sg.light_from_sources([0, 0, 0], [((0, 0, 1), [1, 1, 1])]))
    assert np.unravel_index(np.argmax(img[0]), img[0].shape) == (16, 16)


def test_render_pair_contract():
    light = sg.sample_lighting(np.random.default_rng(1))
    a, b = sg.render_pair(light, 10, 20, np.random.default_rng(2), resolution=(16, 16), pair_id=7)
    np.testing.assert_array_equal(a.clean18, b.clean18)
    assert a.pair_id == b.pair_id == 7
    for r in (a, b):
        assert r.image.min() >= 0 and r.image.max() <= 1
    assert not np.array_equal(a.image, b.image)
    with pytest.raises(InvalidInputError):
        sg.render_pair(light, 10, 10, np.random.default_rng(2))


def test_render_matches_sh_core():
    light = sg.sample_lighting(np.random.default_rng(3))
    p = sg.make_surface("ellipsoid_face", 16, 5, 15.0)
    img = sg.render_surface(p, light)
    ref = sh_core.render_shading(p.basis(), light, p.albedo[p.mask], clamp=True)
    np.testing.assert_allclose(img.transpose(1, 2, 0)[p.mask], np.clip(ref / sg.IMAGE_SCALE, 0, 1), atol=1e-12)


def test_noise_identity_and_monte_carlo():
    clean = np.linspace(-1, 1, 18)
    rng = np.random.default_rng(0)
    zero = sg.NoiseModel(sigma=0.0, outlier_rate=0.0)
    np.testing.assert_array_equal(sg.corrupt_label(clean, zero, rng), clean)
    s = np.linspace(0.1, 0.5, 18)
    m = sg.NoiseModel(sigma=s, outlier_rate=0.0)
    draws = np.array([sg.corrupt_label(clean, m, rng) for _ in range(100_000)])
    assert np.all(np.abs(draws.std(0) / s - 1) < 0.03)
    out = sg.NoiseModel(sigma=s, outlier_rate=1.0, outlier_scale=10.0)
    draws = np.array([sg.corrupt_label(clean, out, rng) for _ in range(20_000)])
    assert np.all(np.abs(draws.std(0) / (10 * s) - 1) < 0.05)


def test_noise_model_validation():
    with pytest.raises(InvalidInputError):
        sg.NoiseModel(sigma=-1.0)
    with pytest.raises(InvalidInputError):
        sg.NoiseModel(sigma=1.0, outlier_rate=2.0)


def test_dataset_counts_and_contracts(dataset_dir):
    ds = sg.Dataset(dataset_dir)
    synth = ds.split("synth_pairs")
    assert len(synth) == 2 * SMALL.n_pairs
    assert len(np.unique(synth.pair_id)) == SMALL.n_pairs
    assert synth.noisy18 is None and synth.condition_id is None
    for p in np.unique(synth.pair_id):
        rows = synth.clean18[synth.pair_id == p]
        np.testing.assert_array_equal(rows[0], rows[1])
    real = ds.split("pseudo_real_train")
    assert len(real) == SMALL.n_real and real.noisy18 is not None
    ev = ds.split("eval")
    assert len(ev) == sg.N_CONDITIONS * SMALL.n_eval_ids
    assert np.all(np.bincount(ev.condition_id) == SMALL.n_eval_ids)
    for split in (synth, real, ev):
        assert split.images.min() >= 0 and split.images.max() <= 1
        assert split.images.shape[1:] == (3, 16, 16)
    assert ds.accessed == {"synth_pairs", "pseudo_real_train", "eval"}


def test_dataset_regeneration_is_byte_identical(dataset_dir, tmp_path):
    again = sg.build_dataset(SMALL, tmp_path / "again")
    for name in ("manifest.json", "subspace.json", *(f"{s}/records.bin" for s in sg.SPLITS)):
        assert (again / name).read_bytes() == (dataset_dir / name).read_bytes()


def test_refuses_to_overwrite(dataset_dir):
    with pytest.raises(InvalidInputError):
        sg.build_dataset(SMALL, dataset_dir)


def test_noisy_label_bias_within_three_sigma():
    cfg = sg.DataConfig(n_real=400, resolution=16)
    sub = sg.default_subspace()
    recs = [sg.make_real_clean(cfg, i, sub) for i in range(cfg.n_real)]
    clean = np.array([r.clean18 for r, _ in recs])
    model = sg.default_noise_model(clean, cfg)
    err = np.array([sg.corrupt_label(r.clean18, model, rng) - r.clean18 for r, rng in recs])
    # per-dim std of the error mixture
    var = model.sigma ** 2 * (1 - cfg.outlier_rate + cfg.outlier_rate * cfg.outlier_scale ** 2)
    assert np.all(np.abs(err.mean(0) - model.bias) <= 3 * np.sqrt(var / len(err)))


def test_record_encoding_roundtrip(tmp_path):
    recs = [
        sg.LabeledImage(np.random.default_rng(0).random((3, 16, 16)), clean18=np.arange(18.0), pair_id=4, index=0),
        sg.LabeledImage(np.zeros((3, 16, 16)), noisy18=-np.arange(18.0), index=1),
        sg.LabeledImage(np.ones((3, 16, 16)), clean18=np.ones(18), condition_id=18, index=2),
    ]
    sg.write_records(tmp_path / "r.bin", recs)
    raw = (tmp_path / "r.bin").read_bytes()
    assert len(raw) == 3 * (11 + 4 * 3 * 16 * 16) + 3 * 4 * 18
    back = sg.read_records(tmp_path / "r.bin", (3, 16, 16))
    np.testing.assert_array_equal(back.index, [0, 1, 2])
    np.testing.assert_array_equal(back.images[0], recs[0].image.astype(np.float32))
    assert back.clean18 is None and back.pair_id is None  # mixed presence -> not columnar
    (tmp_path / "t.bin").write_bytes(raw[:-3])
    with pytest.raises(InvalidInputError):
        sg.read_records(tmp_path / "t.bin", (3, 16, 16))
