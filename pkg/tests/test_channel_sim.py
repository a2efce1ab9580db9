import json
import math

import numpy as np
import pytest

from carlab.channel_sim import (
    PathTapSet,
    SceneConfig,
    array_response,
    generate_dataset,
    label_assignment,
    load_dataset,
    make_sample,
    place_uav,
    place_ues,
    preamble_waveform,
    render_channel_output,
    render_pair,
    resampled_preamble,
    synth_taps,
)
from carlab.errors import ConfigInvalid, ConfigMismatch
from carlab.zc_signal import PathTap, gen_zc

from conftest import small_scene

GEOM = (np.array([25.0, 25.0, 75.0]), np.array([10.0, 40.0, 0.0]))


# -- geometry ---------------------------------------------------------------

def test_uav_without_spread_sits_at_center():
    pos = place_uav(np.random.default_rng(0), SceneConfig(uav_xy_stddev=0.0))
    assert pos.tolist() == [25.0, 25.0, 75.0]


def test_uav_spread_monte_carlo():
    rng = np.random.default_rng(5)
    cfg = SceneConfig()
    xs = np.array([place_uav(rng, cfg) for _ in range(10_000)])
    assert abs(xs[:, 0].std() - 5.0) < 0.15
    assert np.all(xs[:, 2] == 75.0)


def test_ue_positions_cover_the_square():
    ues = place_ues(np.random.default_rng(0), SceneConfig())
    assert ues.shape == (2000, 3)
    assert ues[:, :2].min() >= 0.0 and ues[:, :2].max() <= 50.0
    assert np.all(ues[:, 2] == 0.0)


def test_zero_area_puts_ues_at_origin():
    ues = place_ues(np.random.default_rng(0), SceneConfig(area_side=0.0))
    assert np.all(ues == 0.0)


def test_ue_placement_is_deterministic():
    cfg = SceneConfig()
    a = place_ues(np.random.default_rng(3), cfg)
    b = place_ues(np.random.default_rng(3), cfg)
    assert np.array_equal(a, b)


# -- taps -------------------------------------------------------------------

@pytest.mark.parametrize("label", [0, 1])
def test_taps_are_normalised_and_ordered(label):
    cfg = SceneConfig()
    rng = np.random.default_rng(label)
    for _ in range(50):
        ts = synth_taps(rng, label, cfg, GEOM)
        assert abs(ts.powers.sum() - 1.0) < 1e-9
        assert ts.los_flag == label
        for t in ts.taps:
            assert abs(abs(t.gain) ** 2 - t.power_p) < 1e-12
        tau0 = math.dist(*GEOM) / 299_792_458.0
        assert ts.delays.min() >= tau0 - 1e-15


def test_tap_counts_follow_label():
    cfg = SceneConfig()
    rng = np.random.default_rng(9)
    for _ in range(50):
        assert 3 <= len(synth_taps(rng, 1, cfg, GEOM).taps) <= 5
        assert 6 <= len(synth_taps(rng, 0, cfg, GEOM).taps) <= 12


def test_suppressed_echoes_give_single_tap():
    cfg = SceneConfig(suppress_echoes=True)
    ts = synth_taps(np.random.default_rng(0), 1, cfg, GEOM)
    assert len(ts.taps) == 1
    assert ts.rms_spread() == 0.0


def test_bad_label():
    with pytest.raises(ValueError):
        synth_taps(np.random.default_rng(0), 2, SceneConfig(), GEOM)


def test_population_spread_separates_classes():
    cfg = SceneConfig()
    rng = np.random.default_rng(21)
    los = [synth_taps(rng, 1, cfg, GEOM).rms_spread() for _ in range(1000)]
    nlos = [synth_taps(rng, 0, cfg, GEOM).rms_spread() for _ in range(1000)]
    assert np.median(nlos) > 1.5 * np.median(los)


def test_tap_set_json_round_trip():
    ts = synth_taps(np.random.default_rng(4), 0, SceneConfig(), GEOM)
    back = PathTapSet.from_json(json.loads(json.dumps(ts.to_json())))
    assert back == ts


# -- array steering ----------------------------------------------------------------

def _tapset(*taps):
    return PathTapSet(list(taps), None, 0)


def test_single_element_returns_gains():
    ts = _tapset(PathTap(0.0, 0.25, 0.5j, 1.0, 0.7), PathTap(1e-7, 0.75, -0.8, 2.0, 0.3))
    np.testing.assert_array_equal(array_response(ts, 1), [[0.5j, -0.8]])


def test_broadside_is_uniform():
    ts = _tapset(PathTap(0.0, 1.0, 1 + 0j, 0.9, 0.0))
    A = array_response(ts, 4)
    assert A.shape == (16, 1)
    assert np.allclose(A, A[0, 0])


def test_steering_is_phase_only():
    ts = _tapset(PathTap(0.0, 0.36, 0.6 + 0j, 1.3, 0.8))
    assert np.allclose(np.abs(array_response(ts, 16)), 0.6, atol=1e-12)


def test_steering_matches_scalar_formula():
    az, el, g = 0.7, 0.4, 0.3 - 0.2j
    ts = _tapset(PathTap(0.0, abs(g) ** 2, g, az, el))
    A = array_response(ts, 4, spacing=0.5)
    for a in range(16):
        p, q = divmod(a, 4)
        phase = 2 * math.pi * 0.5 * (p * math.sin(el) * math.cos(az) + q * math.sin(el) * math.sin(az))
        assert abs(A[a, 0] - g * complex(math.cos(phase), math.sin(phase))) < 1e-12


def test_array_response_rejects_empty_grid():
    with pytest.raises(ValueError):
        array_response(_tapset(), 0)


# -- rendering --------------------------------------------------------------------

NOISELESS = SceneConfig(snr_db=math.inf)


def test_no_taps_and_no_noise_gives_zeros():
    out = render_channel_output(gen_zc(), _tapset(), 4, NOISELESS, np.random.default_rng(0))
    assert out.data.shape == (16, 64, 2)
    assert np.all(out.data == 0)


def test_identity_channel_returns_preamble():
    zc = gen_zc()
    ts = _tapset(PathTap(0.0, 1.0, 1 + 0j, 0.0, 0.0))
    out = render_channel_output(zc, ts, 1, NOISELESS, np.random.default_rng(0))
    ref = resampled_preamble(zc, 64)
    np.testing.assert_allclose(out.as_complex()[0], ref, atol=1e-6)
    assert abs(np.mean(np.abs(ref) ** 2) - 1.0) < 1e-9


def test_delay_shifts_the_waveform():
    zc = gen_zc()
    ts = _tapset(PathTap(5 * 50e-9, 1.0, 1 + 0j, 0.0, 0.0))
    out = render_channel_output(zc, ts, 1, NOISELESS, np.random.default_rng(0)).as_complex()[0]
    np.testing.assert_allclose(out, np.roll(resampled_preamble(zc, 64), 5), atol=1e-6)


def test_rows_have_unit_rms_before_noise():
    ts = synth_taps(np.random.default_rng(1), 0, SceneConfig(), GEOM)
    out = render_channel_output(gen_zc(), ts, 4, NOISELESS, np.random.default_rng(0)).as_complex()
    assert np.allclose(np.mean(np.abs(out) ** 2, axis=1), 1.0, atol=1e-5)


def test_noise_power_follows_snr():
    cfg = SceneConfig(snr_db=0.0)
    ts = _tapset(PathTap(0.0, 1.0, 1 + 0j, 0.0, 0.0))
    zc = gen_zc()
    out = render_channel_output(zc, ts, 16, cfg, np.random.default_rng(2)).as_complex()
    noise = out - resampled_preamble(zc, 64)[None, :]
    assert abs(np.mean(np.abs(noise) ** 2) - 1.0) < 0.05


def test_oversampled_preamble_is_periodic_with_period():
    zc = gen_zc(1, 5)
    period = preamble_waveform(zc, 2.0)
    assert period.size == 10
    wave = resampled_preamble(zc, 12, oversample=2.0)
    np.testing.assert_allclose(wave[:10], period)
    np.testing.assert_allclose(wave[10:], period[:2])
    np.testing.assert_allclose(period[::2], zc.values / np.sqrt(np.mean(np.abs(period) ** 2)),
                               atol=1e-9)


def test_late_tap_is_rejected():
    ts = _tapset(PathTap(64 * 50e-9, 1.0, 1 + 0j, 0.0, 0.0))
    with pytest.raises(ConfigMismatch):
        render_channel_output(gen_zc(), ts, 4, SceneConfig(), np.random.default_rng(0))


def test_short_window_is_rejected():
    with pytest.raises(ConfigMismatch):
        render_channel_output(gen_zc(), _tapset(), 4, SceneConfig(time_samples_T=4),
                              np.random.default_rng(0))


# -- datasets ---------------------------------------------------------------------

def test_label_assignment_is_balanced():
    labels = label_assignment(SceneConfig(n_uav_locations=5, ues_per_location=400))
    assert labels.sum() == 1000 and labels.size == 2000


def test_small_dataset_contract(small_dataset):
    ds = small_dataset
    assert ds.low.shape == (60, 16, 64, 2) and ds.low.dtype == np.float32
    assert ds.high.shape == (60, 256, 64, 2)
    assert int(ds.labels.sum()) == 30
    assert [t["los_flag"] for t in ds.taps] == ds.labels.tolist()


def test_pairing_regenerates_high_array(small_dataset):
    ds = small_dataset
    zc = gen_zc(ds.cfg.zc_root, ds.cfg.zc_length)
    for s in (0, 17, 45):
        meta = ds.taps[s]
        low, high = render_pair(ds.cfg, zc, ds.tap_set(s), meta["uav_index"], meta["ue_index"])
        assert np.array_equal(high.data, ds.high[s])
        assert np.array_equal(low.data, ds.low[s])


def test_sample_is_order_independent():
    cfg = small_scene()
    zc = gen_zc()
    labels = label_assignment(cfg)
    a = make_sample(cfg, zc, labels, 1, 7)
    b = make_sample(cfg, zc, labels, 1, 7)
    assert np.array_equal(a.high.data, b.high.data)
    assert a.tap_truth == b.tap_truth


def test_worker_count_does_not_change_bytes(tmp_path):
    cfg = small_scene(ues_per_location=6)
    generate_dataset(cfg, tmp_path / "one", jobs=1)
    generate_dataset(cfg, tmp_path / "two", jobs=2)
    for name in ("low.bin", "high.bin", "labels.bin", "taps.json", "manifest.json"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()


def test_dataset_files_round_trip(tmp_path, small_dataset):
    cfg = small_scene()
    man = generate_dataset(cfg, tmp_path)
    assert man.n_samples == 60 and man.class_counts == {"los": 30, "nlos": 30}
    assert man.low_shape == (16, 64, 2) and man.high_shape == (256, 64, 2)
    assert (tmp_path / "low.bin").stat().st_size == 60 * 16 * 64 * 2 * 4
    loaded = load_dataset(tmp_path)
    assert np.array_equal(loaded.low, small_dataset.low)
    assert np.array_equal(loaded.high, small_dataset.high)
    assert np.array_equal(loaded.labels, small_dataset.labels)
    assert loaded.cfg == cfg
    mapped = load_dataset(tmp_path, mmap=True, with_taps=False)
    assert np.array_equal(np.asarray(mapped.high[3]), small_dataset.high[3])


def test_config_validation():
    with pytest.raises(ConfigInvalid):
        SceneConfig(n_uav_locations=1, ues_per_location=3).validate()
    with pytest.raises(ConfigInvalid):
        SceneConfig(n_low=16, n_high=4).validate()
    with pytest.raises(ConfigInvalid):
        SceneConfig.from_dict({"bogus": 1})
    cfg = SceneConfig(snr_db=3.0)
    assert SceneConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
