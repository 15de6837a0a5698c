"""Unit tests for the signal-processing layer."""

import json
import math

import numpy as np
import pytest

from src.dsp import (
    HOP_LENGTH,
    LOG_FLOOR,
    MCD_DB_CONSTANT,
    SAMPLE_RATE_HZ,
    WIN_LENGTH,
    MelSpectrogram,
    MfccSequence,
    Waveform,
    dct2_basis,
    dct2_mfcc,
    mcd,
    mel_center_frequencies,
    melspectrogram,
    read_mel,
    read_mel_metadata,
    truncate_to_common_length,
    write_mel,
)
from src.errors import InputTooShortError, UnalignedSequencesError


def direct_dct2(frame: np.ndarray) -> np.ndarray:
    """C_k = 2 * sum_n S_n cos(pi k (2n + 1) / 2N), summed term by term."""
    n_filters = frame.shape[0]
    out = np.zeros(n_filters)
    for k in range(n_filters):
        total = 0.0
        for n in range(n_filters):
            total += frame[n] * math.cos(math.pi * k * (2 * n + 1) / (2 * n_filters))
        out[k] = 2.0 * total
    return out


def sine(freq_hz: float, seconds: float = 1.0, amplitude: float = 0.5) -> Waveform:
    t = np.arange(int(seconds * SAMPLE_RATE_HZ)) / SAMPLE_RATE_HZ
    return Waveform(amplitude * np.sin(2 * np.pi * freq_hz * t))


class TestWaveform:
    """Test cases for Waveform validation."""

    def test_rejects_out_of_range_samples(self):
        """Test that samples outside [-1, 1] are rejected."""
        with pytest.raises(ValueError, match="within"):
            Waveform(np.array([0.0, 1.5]))

    def test_rejects_empty(self):
        """Test that an empty array is rejected."""
        with pytest.raises(ValueError, match="non-empty"):
            Waveform(np.array([]))

    def test_duration(self):
        """Test duration from sample count and rate."""
        assert Waveform(np.zeros(SAMPLE_RATE_HZ)).duration_s == pytest.approx(1.0)


class TestMelspectrogram:
    """Test cases for the log-mel front end."""

    def test_silence_is_floored_everywhere(self):
        """Test that one second of silence gives ln(floor_epsilon) in every cell."""
        mel = melspectrogram(Waveform(np.zeros(SAMPLE_RATE_HZ)))

        assert mel.frames == (SAMPLE_RATE_HZ - WIN_LENGTH) // HOP_LENGTH + 1
        assert mel.mel_bins == 80
        assert np.all(mel.values == np.float32(LOG_FLOOR))

    def test_too_short_input(self):
        """Test that a signal shorter than one window is rejected."""
        with pytest.raises(InputTooShortError, match="input too short"):
            melspectrogram(Waveform(np.zeros(WIN_LENGTH - 1)))

    def test_exactly_one_window(self):
        """Test that a signal of exactly one window gives one frame."""
        assert melspectrogram(Waveform(np.zeros(WIN_LENGTH))).frames == 1

    def test_sine_at_bin_center_peaks_in_that_bin(self):
        """Test that a sine at a filter's center frequency is loudest in that filter."""
        bin_index = 60
        freq = mel_center_frequencies()[bin_index]
        mel = melspectrogram(sine(freq))

        assert np.all(np.argmax(mel.values, axis=1) == bin_index)

    def test_doubling_amplitude_adds_ln4(self):
        """Test that doubling the waveform raises every unfloored log-mel value by ln 4."""
        rng = np.random.default_rng(0)
        samples = rng.uniform(-0.25, 0.25, size=SAMPLE_RATE_HZ // 2)
        quiet = melspectrogram(Waveform(samples))
        loud = melspectrogram(Waveform(2.0 * samples))

        mask = quiet.values > LOG_FLOOR + 1.0
        assert mask.any()
        np.testing.assert_allclose(loud.values[mask] - quiet.values[mask], math.log(4.0), atol=1e-4)

    def test_invalid_hop(self):
        """Test that a hop larger than the window is rejected."""
        with pytest.raises(ValueError, match="hop"):
            melspectrogram(Waveform(np.zeros(SAMPLE_RATE_HZ)), hop=WIN_LENGTH + 1)

    def test_custom_mel_bins(self):
        """Test the mel_bins parameter."""
        mel = melspectrogram(Waveform(np.zeros(SAMPLE_RATE_HZ)), mel_bins=40)
        assert mel.mel_bins == 40

    def test_same_waveform_same_bytes(self):
        """Test that two analyses of one waveform are byte-identical."""
        wave = Waveform(np.random.default_rng(7).uniform(-0.5, 0.5, size=SAMPLE_RATE_HZ))
        assert melspectrogram(wave).values.tobytes() == melspectrogram(wave).values.tobytes()


class TestDct2:
    """Test cases for DCT-II cepstral coefficients."""

    def test_constant_frame(self):
        """Test that a constant frame of ones gives [2N, 0, ..., 0]."""
        coeffs = dct2_mfcc(np.ones((1, 4))).values[0]
        np.testing.assert_allclose(coeffs, [8.0, 0.0, 0.0, 0.0], atol=1e-12)

    def test_impulse_frame(self):
        """Test an impulse in the first filter against hand-computed cosines."""
        coeffs = dct2_mfcc(np.array([[1.0, 0.0, 0.0, 0.0]])).values[0]
        expected = [2.0, 2 * math.cos(math.pi / 8), 2 * math.cos(math.pi / 4), 2 * math.cos(3 * math.pi / 8)]
        np.testing.assert_allclose(coeffs, expected, atol=1e-12)
        np.testing.assert_allclose(coeffs, [2.0, 1.84776, 1.41421, 0.76537], atol=1e-5)

    @pytest.mark.parametrize("n_filters", [4, 13, 80, 128])
    def test_matches_direct_summation(self, n_filters):
        """Test against a term-by-term evaluation on random frames."""
        rng = np.random.default_rng(n_filters)
        frames = rng.normal(size=(100, n_filters))
        coeffs = dct2_mfcc(frames).values

        expected = np.stack([direct_dct2(frame) for frame in frames])
        np.testing.assert_allclose(coeffs, expected, atol=1e-6)

    def test_basis_matrix_matches_transform(self):
        """Test that S @ dct2_basis(N) equals dct2_mfcc(S)."""
        rng = np.random.default_rng(1)
        frames = rng.normal(size=(10, 13))
        np.testing.assert_allclose(frames @ dct2_basis(13), dct2_mfcc(frames).values, atol=1e-9)
        assert dct2_basis(13, 5).shape == (13, 5)

    def test_truncated_coefficients(self):
        """Test that num_coeffs keeps the leading coefficients."""
        rng = np.random.default_rng(2)
        frames = rng.normal(size=(3, 80))
        full = dct2_mfcc(frames).values
        assert dct2_mfcc(frames, num_coeffs=13).values.shape == (3, 13)
        np.testing.assert_allclose(dct2_mfcc(frames, num_coeffs=13).values, full[:, :13])

    @pytest.mark.parametrize("num_coeffs", [0, 81])
    def test_num_coeffs_out_of_range(self, num_coeffs):
        """Test that num_coeffs outside [1, mel_bins] is rejected."""
        with pytest.raises(ValueError, match="num_coeffs"):
            dct2_mfcc(np.zeros((2, 80)), num_coeffs=num_coeffs)

    def test_accepts_mel_spectrogram(self):
        """Test that a MelSpectrogram is accepted directly."""
        mel = MelSpectrogram(np.ones((2, 4)))
        assert isinstance(dct2_mfcc(mel), MfccSequence)
        assert dct2_mfcc(mel).frames == 2

    def test_linear(self):
        """Test f(aX + bY) == a f(X) + b f(Y) on random spectrograms."""
        rng = np.random.default_rng(5)
        for _ in range(20):
            x = rng.normal(-4.0, 2.0, size=(6, 80))
            y = rng.normal(-4.0, 2.0, size=(6, 80))
            a, b = rng.uniform(-3.0, 3.0, size=2)
            combined = dct2_mfcc(a * x + b * y).values
            expected = a * dct2_mfcc(x).values + b * dct2_mfcc(y).values
            np.testing.assert_allclose(combined, expected, rtol=1e-9, atol=1e-9 * np.abs(expected).max())


class TestMcd:
    """Test cases for mel-cepstral distortion."""

    def test_identical_sequences(self):
        """Test that identical sequences have zero distortion."""
        seq = np.random.default_rng(0).normal(size=(20, 13))
        assert mcd(seq, seq) == 0.0

    def test_single_frame_hand_computed(self):
        """Test [1, 2] vs [4, 6] -> 5."""
        assert mcd(np.array([[1.0, 2.0]]), np.array([[4.0, 6.0]])) == pytest.approx(5.0, abs=1e-9)

    def test_two_frames_hand_computed(self):
        """Test per-frame squared distances 2 and 8 -> sqrt(5)."""
        ref = np.array([[0.0, 0.0], [0.0, 0.0]])
        syn = np.array([[1.0, 1.0], [2.0, 2.0]])
        assert mcd(ref, syn) == pytest.approx(math.sqrt(5.0), abs=1e-12)

    def test_symmetry_and_scaling(self):
        """Test symmetry and homogeneity on random pairs."""
        rng = np.random.default_rng(3)
        for _ in range(100):
            a = rng.normal(size=(7, 13))
            b = rng.normal(size=(7, 13))
            c = rng.uniform(0.1, 10.0)
            assert mcd(a, b) == pytest.approx(mcd(b, a), rel=1e-12)
            assert mcd(c * a, c * b) == pytest.approx(c * mcd(a, b), rel=1e-9)

    def test_common_frame_permutation(self):
        """Test that reordering the frames of both sequences alike leaves MCD unchanged."""
        rng = np.random.default_rng(11)
        a = rng.normal(size=(30, 13))
        b = rng.normal(size=(30, 13))
        for _ in range(10):
            order = rng.permutation(30)
            assert mcd(a[order], b[order]) == pytest.approx(mcd(a, b), rel=1e-12)

    def test_db_scale(self):
        """Test that db_scale multiplies by 10 sqrt(2) / ln 10."""
        value = mcd(np.array([[1.0, 2.0]]), np.array([[4.0, 6.0]]), db_scale=True)
        assert value == pytest.approx(5.0 * MCD_DB_CONSTANT)
        assert MCD_DB_CONSTANT == pytest.approx(6.14185, abs=1e-4)

    def test_unaligned_frames(self):
        """Test that a frame-count mismatch is an error."""
        with pytest.raises(UnalignedSequencesError, match="unaligned sequences"):
            mcd(np.zeros((3, 13)), np.zeros((4, 13)))

    def test_unaligned_coefficients(self):
        """Test that a coefficient-count mismatch is an error."""
        with pytest.raises(UnalignedSequencesError, match="unaligned sequences"):
            mcd(MfccSequence(np.zeros((3, 13))), MfccSequence(np.zeros((3, 12))))

    def test_truncate_to_common_length(self):
        """Test cropping two arrays to the shorter frame count."""
        a, b = truncate_to_common_length(np.zeros((5, 2)), np.ones((3, 2)))
        assert a.shape == (3, 2)
        assert b.shape == (3, 2)


class TestMelFiles:
    """Test cases for the binary mel-spectrogram file format."""

    def test_write_then_read_is_bit_exact(self, tmp_path):
        """Test that values survive a write/read cycle unchanged."""
        values = np.random.default_rng(0).normal(size=(17, 80)).astype(np.float32)
        path = write_mel(tmp_path / "a" / "utt.mel", MelSpectrogram(values))

        loaded = read_mel(path)
        assert np.array_equal(loaded.values, values)
        assert loaded.sample_rate_hz == SAMPLE_RATE_HZ
        assert loaded.hop_length_samples == HOP_LENGTH

    def test_layout(self, tmp_path):
        """Test the 16-byte header and little-endian float32 payload."""
        path = write_mel(tmp_path / "utt.mel", MelSpectrogram(np.ones((3, 2))))
        data = path.read_bytes()

        assert len(data) == 16 + 3 * 2 * 4
        assert data[:4] == b"MELS"
        assert int.from_bytes(data[6:10], "little") == 3
        assert int.from_bytes(data[10:12], "little") == 2
        assert np.frombuffer(data[16:], dtype="<f4").tolist() == [1.0] * 6

    def test_sidecar_metadata(self, tmp_path):
        """Test that extra metadata lands in the JSON sidecar."""
        path = write_mel(tmp_path / "utt.mel", MelSpectrogram(np.zeros((2, 2))), {"speaker": "spk01"})

        sidecar = json.loads(path.with_suffix(".json").read_text())
        assert sidecar["speaker"] == "spk01"
        assert sidecar["sample_rate_hz"] == SAMPLE_RATE_HZ
        assert read_mel_metadata(path)["speaker"] == "spk01"

    def test_missing_file(self, tmp_path):
        """Test that reading a missing file raises FileNotFoundError."""
        with pytest.raises(FileNotFoundError, match="Mel file not found"):
            read_mel(tmp_path / "missing.mel")

    def test_bad_magic(self, tmp_path):
        """Test that a file with the wrong magic is rejected."""
        path = tmp_path / "bad.mel"
        path.write_bytes(b"NOPE" + bytes(12))
        with pytest.raises(ValueError, match="not a mel file"):
            read_mel(path)

    def test_truncated_payload(self, tmp_path):
        """Test that a payload shorter than the header promises is rejected."""
        path = write_mel(tmp_path / "utt.mel", MelSpectrogram(np.zeros((4, 4))))
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(ValueError, match="expected"):
            read_mel(path)

    def test_invalid_sidecar(self, tmp_path):
        """Test that a corrupt sidecar is reported."""
        path = write_mel(tmp_path / "utt.mel", MelSpectrogram(np.zeros((2, 2))))
        path.with_suffix(".json").write_text("{not json")
        with pytest.raises(ValueError, match="Invalid JSON"):
            read_mel_metadata(path)
