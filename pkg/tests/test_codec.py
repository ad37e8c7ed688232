import hashlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gvqse.codec import (
    Codebook,
    Codec,
    GvqQuantizer,
    LinearCodecModel,
    RvqQuantizer,
    TokenSequence,
    codec_from_bytes,
    codec_to_bytes,
    decode,
    detokenize,
    encode,
    fit_linear_codec,
    gvq_dequantize,
    gvq_loss,
    gvq_quantize,
    load_codec,
    quantization_mse,
    rvq_quantize,
    save_codec,
    stacked_mdct,
    tokenize,
    train_codebook,
    train_codebooks_gvq,
    train_codebooks_rvq,
    vq_quantize,
)
from gvqse.dsp import AudioBuffer
from gvqse.errors import ConfigurationError, CorruptModelError, InsufficientDataError, InvalidInputError
from gvqse.metrics import lsd

from conftest import FS, noise, speech


def scan_nearest(v, entries):
    """Exhaustive scan, strict < so the first (lowest) index wins ties."""
    best, best_d = 0, np.inf
    for m in range(entries.shape[0]):
        d = 0.0
        for j in range(entries.shape[1]):
            d += (v[j] - entries[m, j]) ** 2
        if d < best_d:
            best, best_d = m, d
    return best + 1


def random_gvq(seed, n=4, m=256, dim=8):
    rng = np.random.default_rng(seed)
    return GvqQuantizer([Codebook(rng.standard_normal((m, dim))) for _ in range(n)])


def random_model(seed, k=32, w=40, frames=8):
    """Linear model with random orthonormal analysis rows."""
    d = w * frames
    q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((d, k)))
    return LinearCodecModel(q.T.copy(), q.copy(), w, frames, FS)


class TestLinearCodec:
    def test_zero_audio_zero_latents(self, linear_model):
        assert np.all(encode(AudioBuffer(np.zeros(FS), FS), linear_model) == 0.0)

    def test_one_second_is_fifty_frames(self, linear_model):
        assert encode(speech(1), linear_model).shape == (50, 32)

    def test_encode_linearity(self, linear_model):
        a, b = speech(2), noise(3)
        lhs = encode(AudioBuffer(a.samples + b.samples, FS), linear_model)
        np.testing.assert_allclose(lhs, encode(a, linear_model) + encode(b, linear_model), atol=1e-9)

    def test_rate_mismatch(self, linear_model):
        with pytest.raises(ConfigurationError):
            encode(AudioBuffer(np.zeros(8000), 8000), linear_model)

    def test_zero_latents_zero_audio(self, linear_model):
        out = decode(np.zeros((10, 32)), linear_model)
        assert len(out) == 3200 and np.all(out.samples == 0.0)

    def test_decode_dimension_mismatch(self, linear_model):
        with pytest.raises(InvalidInputError):
            decode(np.zeros((10, 31)), linear_model)

    def test_round_trip_in_subspace(self, linear_model):
        lat = np.random.default_rng(4).standard_normal((30, 32))
        a = decode(lat, linear_model)
        np.testing.assert_allclose(encode(a, linear_model), lat, atol=1e-9)
        assert np.max(np.abs(decode(encode(a, linear_model), linear_model).samples - a.samples)) < 1e-6

    def test_white_noise_round_trip_is_finite(self, linear_model):
        a = noise(5)
        out = decode(encode(a, linear_model), linear_model, len(a))
        value = lsd(a, out)
        assert np.isfinite(value) and value > 0

    def test_projection_is_idempotent(self, linear_model):
        p = linear_model.synthesis @ linear_model.analysis
        assert np.linalg.norm(p @ p - p) < 1e-8
        np.testing.assert_allclose(linear_model.analysis @ linear_model.analysis.T, np.eye(32), atol=1e-10)

    def test_fit_recovers_exact_subspace(self):
        truth = random_model(6)
        corpus = [decode(np.random.default_rng(i).standard_normal((100, 32)), truth) for i in range(7)]
        fitted = fit_linear_codec(corpus, latent_dim=32)
        for a in corpus[:2]:
            back = decode(encode(a, fitted), fitted, len(a))
            assert np.max(np.abs(back.samples - a.samples)) < 1e-6

    def test_full_rank_is_lossless(self, speech_corpus):
        model = fit_linear_codec(speech_corpus, latent_dim=320)
        np.testing.assert_allclose(model.analysis @ model.analysis.T, np.eye(320), atol=1e-10)
        a = noise(7, 0.5)
        assert np.max(np.abs(decode(encode(a, model), model, len(a)).samples - a.samples)) < 1e-6

    def test_more_latent_dims_reconstruct_better(self, speech_corpus):
        def mse(k):
            model = fit_linear_codec(speech_corpus, latent_dim=k)
            errs = []
            for a in speech_corpus:
                x = stacked_mdct(a, model)
                errs.append(np.sum((x - (x @ model.analysis.T) @ model.synthesis.T) ** 2))
            return sum(errs)

        assert mse(32) <= mse(16)

    def test_fit_needs_ten_seconds(self):
        with pytest.raises(InsufficientDataError):
            fit_linear_codec([speech(1, 2.0)] * 4)

    def test_fit_is_deterministic(self, speech_corpus, linear_model):
        again = fit_linear_codec(speech_corpus, latent_dim=32)
        assert np.array_equal(again.analysis, linear_model.analysis)


class TestVq:
    def test_self_quantization(self):
        cb = Codebook(np.random.default_rng(0).standard_normal((16, 8)))
        token, q = vq_quantize(cb.entries[6], cb)
        assert token == 7 and np.array_equal(q, cb.entries[6])

    def test_tie_goes_to_lowest_index(self):
        entries = np.zeros((6, 2))
        entries[1] = [1.0, 0.0]
        entries[4] = [-1.0, 0.0]
        entries[[0, 2, 3, 5]] = 10.0
        token, _ = vq_quantize(np.zeros(2), Codebook(entries))
        assert token == 2

    def test_matches_exhaustive_scan(self):
        rng = np.random.default_rng(1)
        cb = Codebook(rng.standard_normal((256, 8)))
        for v in rng.standard_normal((1000, 8)):
            assert vq_quantize(v, cb)[0] == scan_nearest(v, cb.entries)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            vq_quantize(np.zeros(7), Codebook(np.zeros((4, 8))))


class TestGvq:
    def test_four_group_default_configuration(self, latents):
        q = train_codebooks_gvq(latents, 4, 16, seed=0, iterations=2)
        assert (q.n_groups, q.group_dim, q.latent_dim) == (4, 8, 32)

    def test_concatenated_codevectors(self):
        q = random_gvq(0)
        e = np.concatenate([q.codebooks[0].entries[2], q.codebooks[1].entries[8], q.codebooks[2].entries[0], q.codebooks[3].entries[199]])
        tokens, e_hat = gvq_quantize(e, q)
        assert tokens == (3, 9, 1, 200) and np.array_equal(e_hat, e)

    def test_matches_per_group_scan(self):
        q = random_gvq(1)
        for e in np.random.default_rng(2).standard_normal((200, 32)):
            tokens, e_hat = gvq_quantize(e, q)
            expect = tuple(scan_nearest(e[8 * n : 8 * n + 8], q.codebooks[n].entries) for n in range(4))
            assert tokens == expect
            assert np.array_equal(e_hat, np.concatenate([q.codebooks[n].entries[t - 1] for n, t in enumerate(expect)]))

    def test_dequantize_consistency_and_idempotence(self):
        q = random_gvq(3)
        e = np.random.default_rng(4).standard_normal(32)
        tokens, e_hat = gvq_quantize(e, q)
        assert np.array_equal(gvq_dequantize(tokens, q), e_hat)
        again, e_hat2 = gvq_quantize(gvq_dequantize(tokens, q), q)
        assert again == tokens and np.array_equal(e_hat2, e_hat)

    def test_all_ones(self):
        q = random_gvq(5)
        np.testing.assert_array_equal(gvq_dequantize((1, 1, 1, 1), q), np.concatenate([cb.entries[0] for cb in q.codebooks]))

    @pytest.mark.parametrize("tokens", [(0, 1, 1, 1), (1, 1, 1, 257), (1, 1, 1), (1.5, 1, 1, 1)])
    def test_dequantize_rejects_bad_tokens(self, tokens):
        with pytest.raises(InvalidInputError):
            gvq_dequantize(tokens, random_gvq(6))

    def test_quantize_rejects_wrong_dim(self):
        with pytest.raises(InvalidInputError):
            gvq_quantize(np.zeros(31), random_gvq(7))

    def test_error_decomposes_over_groups(self):
        q = random_gvq(8)
        e = np.random.default_rng(9).standard_normal((50, 32))
        tokens, e_hat = q.quantize(e)
        total = np.sum((e - e_hat) ** 2, axis=1)
        per_group = sum(np.sum((e[:, 8 * n : 8 * n + 8] - e_hat[:, 8 * n : 8 * n + 8]) ** 2, axis=1) for n in range(4))
        np.testing.assert_allclose(total, per_group, rtol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.sampled_from([1, 2, 4]), m=st.integers(1, 40))
    def test_nearest_assignment_is_optimal(self, seed, n, m):
        rng = np.random.default_rng(seed)
        dim = 8 // n if n < 8 else 1
        q = GvqQuantizer([Codebook(rng.standard_normal((m, dim))) for _ in range(n)])
        e = rng.standard_normal((20, n * dim))
        _, e_hat = q.quantize(e)
        best = gvq_loss(q.split(e), q.split(e_hat))
        other = rng.integers(1, m + 1, size=(20, n))
        assert best <= gvq_loss(q.split(e), q.split(q.dequantize(other))) + 1e-12

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_oracle_equivalence_property(self, seed):
        rng = np.random.default_rng(seed)
        q = GvqQuantizer([Codebook(rng.integers(-2, 3, size=(12, 2)).astype(float)) for _ in range(3)])
        e = rng.integers(-2, 3, size=6).astype(float)  # integer grid provokes ties
        tokens, _ = gvq_quantize(e, q)
        assert tokens == tuple(scan_nearest(e[2 * n : 2 * n + 2], q.codebooks[n].entries) for n in range(3))


class TestGvqLoss:
    def test_zero_when_equal(self):
        x = [np.ones((3, 8))] * 4
        assert gvq_loss(x, x) == 0.0

    def test_hand_arithmetic(self):
        assert gvq_loss([np.array([[0.0, 0.0]])], [np.array([[3.0, 4.0]])]) == 25.0

    def test_matches_double_loop(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            ins = [rng.standard_normal((17, 8)) for _ in range(4)]
            outs = [rng.standard_normal((17, 8)) for _ in range(4)]
            expect = 0.0
            for e_n, q_n in zip(ins, outs):
                acc = 0.0
                for b in range(e_n.shape[0]):
                    for j in range(e_n.shape[1]):
                        acc += (q_n[b, j] - e_n[b, j]) ** 2
                expect += acc / e_n.shape[0]
            assert abs(gvq_loss(ins, outs) - expect) <= 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            gvq_loss([np.zeros((2, 8))], [np.zeros((2, 7))])
        with pytest.raises(InvalidInputError):
            gvq_loss([np.zeros((2, 8))], [])


class TestCodebookTraining:
    def test_separable_clusters_converge(self):
        rng = np.random.default_rng(0)
        centers = rng.standard_normal((16, 8)) * 10
        data = np.repeat(centers, 20, axis=0)
        fit = train_codebook(data, 16, seed=3)
        assert fit.mse_history[-1] < 1e-9
        assert np.allclose(np.sort(fit.codebook.entries, axis=0), np.sort(centers, axis=0))

    def test_mse_non_increasing(self, latents):
        fit = train_codebook(latents[:, :8], 32, seed=1, iterations=50)
        assert len(fit.mse_history) == 51
        assert np.all(np.diff(fit.mse_history) <= 1e-10)

    def test_trained_beats_random_init(self, latents):
        train, held = latents[::2], latents[1::2]
        trained = train_codebooks_gvq(train, 4, 16, seed=0)
        rng = np.random.default_rng(0)
        rand = GvqQuantizer([Codebook(train[rng.choice(train.shape[0], 16, replace=False), 8 * n : 8 * n + 8]) for n in range(4)])
        assert quantization_mse(held, trained) < quantization_mse(held, rand)

    def test_deterministic(self, latents):
        a = train_codebooks_gvq(latents, 4, 16, seed=5, iterations=10)
        b = train_codebooks_gvq(latents, 4, 16, seed=5, iterations=10)
        for x, y in zip(a.codebooks, b.codebooks):
            assert x.entries.tobytes() == y.entries.tobytes()

    def test_rows_distinct_after_training(self, small_codec):
        for cb in small_codec.quantizer.codebooks:
            d = np.sum((cb.entries[:, None] - cb.entries[None]) ** 2, axis=2)
            assert np.all(d[~np.eye(cb.size, dtype=bool)] > 1e-12)

    def test_insufficient_distinct_vectors(self):
        data = np.repeat(np.eye(4), 10, axis=0)
        with pytest.raises(InsufficientDataError):
            train_codebook(data, 8)
        with pytest.raises(InsufficientDataError):
            train_codebook(np.zeros((3, 2)), 8)

    def test_dead_codes_reseeded(self):
        # two tight clusters, eight codes: dead entries must come back into use
        rng = np.random.default_rng(1)
        data = np.concatenate([rng.normal(0, 0.01, (200, 2)), rng.normal(5, 0.01, (200, 2))])
        fit = train_codebook(data, 8, seed=0, iterations=30)
        assert np.all(np.diff(fit.mse_history) <= 1e-10)
        assert np.all(np.isfinite(fit.codebook.entries))

    def test_larger_codebook_lower_heldout_mse(self, latents):
        train, held = latents[::2], latents[1::2]
        small = train_codebooks_gvq(train, 4, 8, seed=0, iterations=20)
        large = train_codebooks_gvq(train, 4, 64, seed=0, iterations=20)
        assert quantization_mse(held, large) <= quantization_mse(held, small)


class TestRvq:
    def test_single_codevector_then_zeros(self):
        rng = np.random.default_rng(0)
        stage1 = rng.standard_normal((8, 4))
        later = rng.standard_normal((8, 4))
        later[2] = 0.0
        q = RvqQuantizer([Codebook(stage1), Codebook(later), Codebook(later)])
        tokens, e_hat = rvq_quantize(stage1[5], q)
        assert tokens == (6, 3, 3) and np.array_equal(e_hat, stage1[5])

    def test_matches_stagewise_scan(self):
        rng = np.random.default_rng(1)
        q = RvqQuantizer([Codebook(rng.standard_normal((32, 6)) / (s + 1)) for s in range(3)])
        for e in rng.standard_normal((300, 6)):
            tokens, e_hat = rvq_quantize(e, q)
            residual, expect, acc = e.copy(), [], np.zeros(6)
            for cb in q.codebooks:
                t = scan_nearest(residual, cb.entries)
                expect.append(t)
                acc = acc + cb.entries[t - 1]
                residual = e - acc
            assert tokens == tuple(expect)
            np.testing.assert_array_equal(e_hat, acc)

    def test_residual_norms_shrink_after_training(self, small_rvq_codec, latents):
        _, _, residuals = small_rvq_codec.quantizer.quantize(latents, return_residuals=True)
        assert latents.shape[0] >= 500
        norms = [np.mean(np.linalg.norm(r, axis=1)) for r in residuals]
        assert all(b <= a for a, b in zip(norms, norms[1:]))

    def test_dim_mismatch(self):
        with pytest.raises(InvalidInputError):
            rvq_quantize(np.zeros(5), RvqQuantizer([Codebook(np.zeros((2, 6)))]))


class TestTokenize:
    def test_shapes(self, small_codec):
        t = tokenize(speech(1), small_codec.model, small_codec.quantizer)
        assert t.tokens.shape == (50, 4) and t.tokens.min() >= 1 and t.tokens.max() <= 16

    def test_detokenize_length(self, small_codec):
        a = speech(2, 1.013)
        out = detokenize(small_codec.tokenize(a), small_codec.model, small_codec.quantizer)
        assert len(out) == len(a) and np.all(np.isfinite(out.samples))

    def test_deterministic(self, small_codec):
        a = speech(3)
        assert np.array_equal(small_codec.tokenize(a).tokens, small_codec.tokenize(a).tokens)

    def test_text_round_trip(self):
        seq = TokenSequence(np.array([[1, 2, 3, 4], [16, 1, 9, 2]]), 16)
        assert seq.to_text() == "1 2 3 4\n16 1 9 2\n"
        assert np.array_equal(TokenSequence.from_text(seq.to_text(), 16).tokens, seq.tokens)

    def test_out_of_range_rejected(self):
        with pytest.raises(InvalidInputError):
            TokenSequence(np.array([[0, 1]]), 4)


class TestSerialization:
    def test_round_trip_is_byte_identical(self, small_codec, tmp_path):
        save_codec(tmp_path / "c.gvqc", small_codec)
        loaded = load_codec(tmp_path / "c.gvqc")
        assert codec_to_bytes(loaded) == (tmp_path / "c.gvqc").read_bytes()
        assert loaded.checksum() == small_codec.checksum()
        assert loaded.quantizer.kind == "gvq"

    def test_rvq_round_trip(self, small_rvq_codec):
        loaded, end = codec_from_bytes(codec_to_bytes(small_rvq_codec))
        assert loaded.quantizer.kind == "rvq" and end == len(codec_to_bytes(small_rvq_codec))

    def test_header_layout(self, small_codec):
        raw = codec_to_bytes(small_codec)
        assert raw[:4] == b"GVQC"
        header = np.frombuffer(raw[4:36], dtype="<u4")
        assert list(header) == [1, 0, 4, 16, 32, 40, 320, 16000]
        assert len(raw) == 36 + 8 * (32 * 320 * 2 + 4 * 16 * 8)

    def test_corrupt_inputs(self, small_codec, tmp_path):
        raw = codec_to_bytes(small_codec)
        with pytest.raises(CorruptModelError):
            codec_from_bytes(b"XXXX" + raw[4:])
        with pytest.raises(CorruptModelError):
            codec_from_bytes(raw[:-8])
        with pytest.raises(CorruptModelError):
            codec_from_bytes(raw[:10])
        (tmp_path / "t.gvqc").write_bytes(raw + b"\0")
        with pytest.raises(CorruptModelError):
            load_codec(tmp_path / "t.gvqc")

    def test_checksum_is_sha256_of_container(self, small_codec):
        assert small_codec.checksum() == hashlib.sha256(codec_to_bytes(small_codec)).hexdigest()

    def test_mismatched_quantizer_rejected(self, linear_model):
        with pytest.raises(ConfigurationError):
            Codec(linear_model, random_gvq(0, 4, 8, 4))
