import numpy as np
import pytest

from codesep.data import (ToySpeakerSpec, build_datasets, load_singles, load_wav_corpus, make_speakers,
                          synth_utterance, write_corpus)
from codesep.dsp import Waveform, write_wav
from codesep.errors import DataError


def test_synth_deterministic_and_normalised():
    spec = make_speakers(2, seed=3)[0]
    a, b = synth_utterance(spec, 7, 0.5), synth_utterance(spec, 7, 0.5)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert np.max(np.abs(a.samples)) == pytest.approx(0.5, abs=1e-6)
    assert len(a) == 4000


@pytest.mark.parametrize("f0_step", [0.0, 100.0])
def test_disjoint_f0_bands_give_disjoint_peaks(f0_step):
    low = ToySpeakerSpec((100.0, 100.0) if f0_step else (90.0, 110.0), f0_step_hz=f0_step, pause_prob=0.0)
    high = ToySpeakerSpec((400.0, 400.0) if f0_step else (380.0, 420.0), f0_step_hz=f0_step, pause_prob=0.0)
    peaks = []
    for spec in (low, high):
        x = synth_utterance(spec, 1, 1.0).samples
        spectrum = np.abs(np.fft.rfft(x))
        freqs = np.fft.rfftfreq(x.size, 1 / 8000)
        band = (freqs > 50) & (freqs < 600)
        peaks.append(freqs[band][np.argmax(spectrum[band])])
    assert peaks[0] < 250 < peaks[1]


def test_spec_validation():
    with pytest.raises(ValueError):
        ToySpeakerSpec((100.0, 600.0)).validate(8000)


def test_phase_locked_speakers_on_grid():
    for spec in make_speakers(4, 0, 8000, 100.0):
        lo, hi = spec.f0_range_hz
        assert lo % 100 == 0 and hi % 100 == 0


@pytest.fixture(scope="module")
def corpus():
    return build_datasets(3, 10, 0.25, seed=1)


class TestCorpus:
    def test_additivity_and_pairing(self, corpus):
        assert len(corpus.mixtures) == len(corpus.singles)
        for p in corpus.mixtures:
            np.testing.assert_array_equal(p.y.samples, p.x1.samples + p.x2.samples)
            assert p.speakers[0] != p.speakers[1]
            first, second = p.uid.split("__")
            assert first != second

    def test_split_sizes(self, corpus):
        counts = {s: len(corpus.split(s).singles) for s in ("train", "dev", "test")}
        assert counts == {"train": 24, "dev": 3, "test": 3}
        for p in corpus.mixtures:
            assert p.split in {"train", "dev", "test"}

    def test_seeded(self, corpus):
        again = build_datasets(3, 10, 0.25, seed=1)
        for a, b in zip(corpus.mixtures, again.mixtures):
            np.testing.assert_array_equal(a.y.samples, b.y.samples)

    def test_disk_round_trip(self, corpus, tmp_path):
        write_corpus(corpus, tmp_path)
        singles = load_singles(tmp_path)
        assert [u.uid for u in singles] == [u.uid for u in corpus.singles]
        mixtures, rejected = load_wav_corpus(tmp_path)
        assert not rejected
        assert sorted(m.uid for m in mixtures) == sorted(p.uid for p in corpus.mixtures)
        by_id = {p.uid: p for p in corpus.mixtures}
        for m in mixtures:
            assert m.split == by_id[m.uid].split
            np.testing.assert_allclose(m.x1.samples, by_id[m.uid].x1.samples, atol=1 / 32768)

    def test_byte_identical_files(self, corpus, tmp_path):
        write_corpus(corpus, tmp_path / "a")
        write_corpus(build_datasets(3, 10, 0.25, seed=1), tmp_path / "b")
        for f in sorted((tmp_path / "a").rglob("*.wav")):
            assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()


class TestLoader:
    def test_empty(self, tmp_path):
        for sub in ("mix", "s1", "s2"):
            (tmp_path / sub).mkdir()
        assert load_wav_corpus(tmp_path) == ([], [])

    def test_non_additive_rejected(self, tmp_path):
        for sub, value in (("mix", 0.5), ("s1", 0.1), ("s2", 0.1)):
            (tmp_path / sub).mkdir()
            write_wav(tmp_path / sub / "a.wav", Waveform(np.full(100, value), 8000))
        mixtures, rejected = load_wav_corpus(tmp_path)
        assert mixtures == [] and rejected == [str(tmp_path / "mix" / "a.wav")]

    def test_missing_counterpart(self, tmp_path):
        (tmp_path / "mix").mkdir()
        write_wav(tmp_path / "mix" / "a.wav", Waveform(np.zeros(10), 8000))
        with pytest.raises(DataError):
            load_wav_corpus(tmp_path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError):
            load_singles(tmp_path)


def test_build_validation():
    with pytest.raises(ValueError):
        build_datasets(1, 5, 0.1)
