import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import signal as sps

from gvqse.degrade import (
    TEST_SNR_GRID_DB,
    TRAIN_SNR_GRID_DB,
    Assets,
    BandlimitStage,
    DegradationSpec,
    NoiseStage,
    ReverbStage,
    Rir,
    add_noise,
    apply_spec,
    band_limit,
    convolve_rir,
    exponential_rir,
    pink_noise,
    speech_like,
    synth_assets,
)
from gvqse.dsp import AudioBuffer
from gvqse.errors import AssetLookupError, DegenerateInputError, InvalidInputError
from gvqse.metrics import measure_snr

from conftest import FS, noise, speech


def power(x):
    return float(np.mean(np.asarray(x) ** 2))


def tone(f, seconds=1.0):
    t = np.arange(int(seconds * FS)) / FS
    return AudioBuffer(np.sin(2 * np.pi * f * t), FS)


def naive_convolve(x, h):
    """y[n] = sum_k h[k] x[n - k] for n < len(x)."""
    y = np.zeros(len(x))
    for n in range(len(x)):
        k_max = min(n, len(h) - 1)
        y[n] = np.dot(h[: k_max + 1], x[n - np.arange(k_max + 1)])
    return y


@pytest.fixture(scope="module")
def assets():
    return synth_assets(seed=7, n_clean=3, clean_seconds=1.0, noise_seconds=3.0)


class TestAddNoise:
    @pytest.mark.parametrize("snr", TRAIN_SNR_GRID_DB + TEST_SNR_GRID_DB)
    def test_snr_grids(self, snr, assets):
        clean = assets.clean[0]
        for source in ("white", "pink", "babble"):
            out = add_noise(clean, assets.noises[source], snr, seed=1)
            assert abs(measure_snr(clean, out) - snr) < 0.01

    def test_grids(self):
        assert TRAIN_SNR_GRID_DB == (0.0, 5.0, 10.0, 15.0)
        assert TEST_SNR_GRID_DB == (2.5, 7.5, 12.5, 17.5)

    def test_zero_db_means_equal_powers(self):
        clean = tone(440)
        out = add_noise(clean, noise(1, 2.0), 0.0, seed=0)
        scaled = out.samples - clean.samples
        assert abs(10 * np.log10(power(clean.samples) / power(scaled))) < 0.01

    def test_sine_in_white_noise_power_meter(self):
        clean = tone(1000)
        out = add_noise(clean, noise(2, 3.0), 15.0, seed=4)
        residual = out.samples - clean.samples
        meter = 10 * np.log10(np.sum(clean.samples**2) / np.sum(residual**2))
        assert abs(meter - 15.0) < 0.01

    def test_short_noise_is_tiled(self):
        clean = speech(3)
        short = noise(4, 0.1)
        out = add_noise(clean, short, 5.0, seed=2)
        assert len(out) == len(clean)
        assert abs(measure_snr(clean, out) - 5.0) < 0.01
        residual = out.samples - clean.samples
        np.testing.assert_allclose(residual[1600:3200], residual[:1600], atol=1e-12)

    def test_seeded(self):
        clean, n = speech(5), noise(6, 3.0)
        a = add_noise(clean, n, 5.0, seed=1)
        assert np.array_equal(a.samples, add_noise(clean, n, 5.0, seed=1).samples)
        assert not np.array_equal(a.samples, add_noise(clean, n, 5.0, seed=2).samples)

    def test_errors(self):
        with pytest.raises(InvalidInputError):
            add_noise(AudioBuffer(np.zeros(100), FS), noise(1), 5.0)
        with pytest.raises(DegenerateInputError):
            add_noise(speech(1), AudioBuffer(np.zeros(20000), FS), 5.0)
        with pytest.raises(InvalidInputError):
            add_noise(speech(1), AudioBuffer(np.ones(100), 8000), 5.0)
        with pytest.raises(InvalidInputError):
            add_noise(speech(1), noise(1), float("nan"))

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), snr=st.floats(-20, 40), scale=st.floats(1e-4, 1e3))
    def test_exact_snr_property(self, seed, snr, scale):
        rng = np.random.default_rng(seed)
        clean = AudioBuffer(scale * rng.standard_normal(800), FS)
        out = add_noise(clean, AudioBuffer(rng.uniform(-1, 1, 500), FS), snr, rng)
        assert abs(measure_snr(clean, out) - snr) < 0.01


class TestConvolveRir:
    def test_unit_impulse_is_identity(self):
        x = speech(1)
        out = convolve_rir(x, Rir(np.array([1.0]), FS))
        np.testing.assert_array_equal(out.samples, x.samples)

    def test_delayed_impulse_shifts(self):
        x = np.zeros(2000)
        x[50] = 0.8  # the peak survives the truncation
        x[51:1500] = np.random.default_rng(0).uniform(-0.5, 0.5, 1449)
        h = np.zeros(101)
        h[100] = 1.0
        out = convolve_rir(AudioBuffer(x, FS), Rir(h, FS)).samples
        np.testing.assert_allclose(out[100:], x[:-100], atol=1e-12)
        np.testing.assert_allclose(out[:100], 0.0, atol=1e-12)

    def test_matches_naive_convolution(self):
        rng = np.random.default_rng(1)
        x = speech(2, 0.5).samples
        h = exponential_rir(rng, 0.1)
        out = convolve_rir(AudioBuffer(x, FS), Rir(h, FS)).samples
        ref = naive_convolve(x, h)
        ref *= np.max(np.abs(x)) / np.max(np.abs(ref))
        assert np.max(np.abs(out - ref)) < 1e-9
        raw = convolve_rir(AudioBuffer(x, FS), Rir(h, FS), normalize=False).samples
        assert np.max(np.abs(raw - naive_convolve(x, h))) < 1e-9

    def test_peak_normalised(self, assets):
        x = assets.clean[1]
        out = convolve_rir(x, assets.rirs["rt0.5"])
        assert np.max(np.abs(out.samples)) == pytest.approx(np.max(np.abs(x.samples)), rel=1e-12)

    def test_linearity(self, assets):
        a, b = assets.clean[0].samples, assets.clean[1].samples
        rir = assets.rirs["rt0.3"]
        conv = lambda v, **kw: convolve_rir(AudioBuffer(v, FS), rir, **kw).samples
        np.testing.assert_allclose(conv(2 * a - 3 * b, normalize=False), 2 * conv(a, normalize=False) - 3 * conv(b, normalize=False), atol=1e-9)
        np.testing.assert_allclose(conv(-2.5 * a), -2.5 * conv(a), atol=1e-12)

    def test_rate_mismatch(self):
        with pytest.raises(InvalidInputError):
            convolve_rir(speech(1), Rir(np.ones(3), 8000))

    def test_invalid_rir(self):
        for taps in (np.zeros(4), np.array([]), np.array([1.0, np.inf])):
            with pytest.raises(InvalidInputError):
                Rir(taps, FS)


class TestBandLimit:
    def test_passband(self):
        out = band_limit(tone(2000), 8000)
        assert len(out) == FS and out.sample_rate == FS
        assert np.corrcoef(out.samples, tone(2000).samples)[0, 1] > 0.999

    def test_stopband(self):
        assert np.sqrt(power(band_limit(tone(6000), 8000).samples)) < 0.01 * np.sqrt(power(tone(6000).samples))

    @pytest.mark.parametrize("f", [4050, 4500, 5000, 6000, 7000, 7900])
    def test_forty_db_above_cutoff(self, f):
        x = tone(f)
        out = band_limit(x, 8000).samples[800:-800]  # skip the filter edges
        assert 10 * np.log10(power(out) / power(x.samples)) <= -40.0

    @pytest.mark.parametrize("target", [16000, 24000, 0, -1])
    def test_rejects_bad_target(self, target):
        with pytest.raises(InvalidInputError):
            band_limit(tone(100), target)


class TestApplySpec:
    def test_empty_spec_is_identity(self):
        x = speech(1)
        y, c = apply_spec(x, DegradationSpec((), 3), None)
        assert y.samples.tobytes() == x.samples.tobytes() and c is x

    def test_mixed_recipe_order(self, assets):
        spec = DegradationSpec.parse("reverb(rt0.3)>noise(white,7.5)>bandlimit(8000)", seed=11)
        assert [type(s) for s in spec.stages] == [ReverbStage, NoiseStage, BandlimitStage]
        x = assets.clean[2]
        y, _ = apply_spec(x, spec, assets)
        rng = np.random.default_rng(11)
        manual = band_limit(add_noise(convolve_rir(x, assets.rirs["rt0.3"]), assets.noises["white"], 7.5, rng), 8000)
        np.testing.assert_array_equal(y.samples, manual.samples)
        swapped, _ = apply_spec(x, DegradationSpec.parse("noise(white,7.5)>reverb(rt0.3)>bandlimit(8000)", 11), assets)
        assert not np.allclose(swapped.samples, y.samples)

    def test_deterministic(self, assets):
        spec = DegradationSpec.parse("noise(babble,2.5)>reverb(rt0.8)", seed=5)
        a, _ = apply_spec(assets.clean[0], spec, assets)
        b, _ = apply_spec(assets.clean[0], spec, assets)
        assert a.samples.tobytes() == b.samples.tobytes()

    def test_missing_assets(self, assets):
        with pytest.raises(AssetLookupError):
            apply_spec(assets.clean[0], DegradationSpec.parse("noise(traffic,5)"), assets)
        with pytest.raises(AssetLookupError):
            apply_spec(assets.clean[0], DegradationSpec.parse("reverb(hall)"), assets)

    def test_mapping_assets(self, assets):
        spec = DegradationSpec.parse("noise(pink,10)", 1)
        a, _ = apply_spec(assets.clean[0], spec, {"noises": assets.noises})
        b, _ = apply_spec(assets.clean[0], spec, assets)
        assert np.array_equal(a.samples, b.samples)

    def test_parse_errors(self):
        for text in ("noise(white)", "echo(3)", "noise(white,abc)", "bandlimit()", "noise(white,inf)"):
            with pytest.raises(InvalidInputError):
                DegradationSpec.parse(text)

    @settings(max_examples=50, deadline=None)
    @given(
        stages=st.lists(
            st.one_of(
                st.builds(NoiseStage, st.sampled_from(["white", "pink", "babble"]), st.floats(-30, 60).map(lambda v: round(v, 3))),
                st.builds(ReverbStage, st.sampled_from(["rt0.3", "rt0.5"])),
                st.builds(BandlimitStage, st.integers(1000, 15999)),
            ),
            max_size=4,
        ),
        seed=st.integers(0, 2**31),
    )
    def test_text_round_trip(self, stages, seed):
        spec = DegradationSpec(tuple(stages), seed)
        assert DegradationSpec.parse(str(spec), seed) == spec


class TestSynthAssets:
    def test_pink_noise_slope(self):
        y = pink_noise(np.random.default_rng(0), 20 * FS)
        f, p = sps.welch(y, FS, nperseg=8192)
        band = (f >= 100) & (f <= 4000)
        slope = np.polyfit(np.log2(f[band]), 10 * np.log10(p[band]), 1)[0]
        assert abs(slope - (-3.0)) <= 0.5

    @pytest.mark.parametrize("rt60", [0.3, 0.5, 0.8])
    def test_rir_decay_schroeder(self, rt60):
        h = exponential_rir(np.random.default_rng(3), rt60)
        edc = np.cumsum((h**2)[::-1])[::-1]
        edc_db = 10 * np.log10(edc / edc[0])
        t = np.arange(h.size) / FS
        fit = (edc_db <= -5) & (edc_db >= -35)
        slope = np.polyfit(t[fit], edc_db[fit], 1)[0]
        assert abs(-60.0 / slope - rt60) <= 0.1 * rt60

    def test_rir_shape(self, assets):
        for rir in assets.rirs.values():
            assert np.argmax(np.abs(rir.taps)) == 0 and np.max(np.abs(rir.taps)) == 1.0
        assert sorted(assets.rirs) == ["rt0.3", "rt0.5", "rt0.8"]

    def test_same_seed_same_assets(self, assets):
        again = synth_assets(seed=7, n_clean=3, clean_seconds=1.0, noise_seconds=3.0)
        for k in assets.noises:
            assert np.array_equal(again.noises[k].samples, assets.noises[k].samples)
        for k in assets.rirs:
            assert np.array_equal(again.rirs[k].taps, assets.rirs[k].taps)
        for a, b in zip(assets.clean, again.clean):
            assert np.array_equal(a.samples, b.samples)
        other = synth_assets(seed=8, n_clean=1, clean_seconds=1.0, noise_seconds=3.0)
        assert not np.array_equal(other.clean[0].samples, assets.clean[0].samples)

    def test_speech_like_signal(self):
        x = speech_like(np.random.default_rng(4), 2.0)
        assert x.shape == (2 * FS,) and np.all(np.isfinite(x))
        assert 0.45 < np.max(np.abs(x)) < 0.55
        f, p = sps.welch(x, FS, nperseg=1024)
        assert np.sum(p[f < 4000]) > 10 * np.sum(p[f >= 4000])  # energy sits in the speech band

    def test_assets_container(self, assets):
        assert isinstance(assets, Assets) and len(assets.clean) == 3
        assert set(assets.noises) == {"white", "pink", "babble"}
        for n in assets.noises.values():
            assert abs(power(n.samples) - 1.0) < 0.01 or n is assets.noises["white"]
