"""Synthetic two-speaker corpora and a loader for Libri2Mix-style WAV folders.

Toy "speakers" are parametric harmonic sources. Each speaker owns an f0 band,
a harmonic roll-off, a set of formant resonances and an amplitude-modulation
rate; utterances draw a random f0 contour and pause pattern from that family.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import Waveform, read_wav, write_wav
from .errors import DataError

log = logging.getLogger(__name__)

PEAK = 0.5
SPLITS = ("train", "dev", "test")


@dataclass(frozen=True)
class ToySpeakerSpec:
    f0_range_hz: tuple[float, float]
    harmonic_decay: float = 1.0  # amplitude of harmonic h is h ** -decay
    formants: tuple[tuple[float, float], ...] = ((500.0, 150.0), (1500.0, 250.0))
    am_rate_hz: float = 3.0
    pause_prob: float = 0.2
    # > 0: phase-locked mode, f0 restricted to multiples of this step
    f0_step_hz: float = 0.0
    phase_seed: int = 0

    def validate(self, sample_rate_hz: int) -> None:
        lo, hi = self.f0_range_hz
        if not 0 < lo <= hi < sample_rate_hz / 16:
            raise ValueError(f"f0 range {self.f0_range_hz} must lie in (0, Nyquist/8)")
        if self.harmonic_decay < 0 or self.am_rate_hz < 0:
            raise ValueError("harmonic decay and modulation rate must be nonnegative")


@dataclass
class Utterance:
    uid: str
    speaker: int
    split: str
    waveform: Waveform


@dataclass
class MixturePair:
    uid: str
    y: Waveform
    x1: Waveform
    x2: Waveform
    speakers: tuple[int, int] = (-1, -1)
    split: str = "train"


@dataclass
class Corpus:
    """``singles`` is the single-speaker set, ``mixtures`` the mixture set."""

    singles: list[Utterance] = field(default_factory=list)
    mixtures: list[MixturePair] = field(default_factory=list)

    def split(self, name: str) -> "Corpus":
        return Corpus([u for u in self.singles if u.split == name],
                      [p for p in self.mixtures if p.split == name])


def f0_grid(spec: ToySpeakerSpec) -> np.ndarray:
    lo, hi = spec.f0_range_hz
    k = np.arange(np.ceil(lo / spec.f0_step_hz - 1e-9), np.floor(hi / spec.f0_step_hz + 1e-9) + 1)
    return k * spec.f0_step_hz


def synth_utterance(spec: ToySpeakerSpec, seed: int, duration_s: float,
                    sample_rate_hz: int = 8000) -> Waveform:
    """Harmonic source with a random f0 contour, formant envelope and pauses.

    With ``spec.f0_step_hz > 0`` the source is phase-locked: f0 is drawn from
    multiples of the step, segment edges fall on multiples of the common period
    and harmonic phases are the speaker's own, so the waveform inside any
    period-aligned window depends only on (f0, gain) there.

    Deterministic in ``(spec, seed)``; peak-normalised to 0.5.
    """
    if duration_s <= 0:
        raise ValueError(f"duration must be positive, got {duration_s}")
    spec.validate(sample_rate_hz)
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate_hz))
    lo, hi = spec.f0_range_hz
    locked = spec.f0_step_hz > 0
    if locked:
        grid = f0_grid(spec)
        if grid.size == 0:
            raise ValueError(f"no multiple of {spec.f0_step_hz} Hz inside {spec.f0_range_hz}")
        quantum = int(round(sample_rate_hz / spec.f0_step_hz))

    f0 = np.zeros(n)
    gain = np.zeros(n)
    pos = 0
    while pos < n:
        seg = int(rng.uniform(0.12, 0.4) * sample_rate_hz)
        if locked:
            seg = max(quantum, quantum * round(seg / quantum))
        end = min(n, pos + seg)
        if rng.random() >= spec.pause_prob:
            if locked:
                a = b = grid[rng.integers(grid.size)]
            else:
                a, b = rng.uniform(lo, hi), rng.uniform(lo, hi)
            f0[pos:end] = np.linspace(a, b, end - pos)
            ramp = min(int(0.01 * sample_rate_hz), (end - pos) // 2)
            g = np.ones(end - pos)
            if ramp:
                g[:ramp] = np.linspace(0, 1, ramp)
                g[-ramp:] = np.linspace(1, 0, ramp)
            gain[pos:end] = g
        else:
            f0[pos:end] = lo
        pos = end

    t = np.arange(n) / sample_rate_hz
    am = 1.0 + 0.3 * np.sin(2 * np.pi * spec.am_rate_hz * t + rng.uniform(0, 2 * np.pi))
    if locked:
        phase = 2 * np.pi * f0 * t
        offsets = np.random.default_rng(spec.phase_seed).uniform(0, 2 * np.pi, 64)
    else:
        phase = 2 * np.pi * np.cumsum(f0) / sample_rate_hz
        offsets = rng.uniform(0, 2 * np.pi, 64)
    nyquist = sample_rate_hz / 2
    out = np.zeros(n)
    for h in range(1, int(nyquist // lo) + 1):
        freq = h * f0
        envelope = sum(1.0 / (1.0 + ((freq - c) / bw) ** 2) for c, bw in spec.formants)
        amp = h ** -spec.harmonic_decay * (0.2 + envelope) * (freq < nyquist * 0.95)
        out += amp * np.cos(h * phase + offsets[(h - 1) % offsets.size])
    out *= gain * am
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= PEAK / peak
    return Waveform(out, sample_rate_hz)


def make_speakers(num_speakers: int, seed: int = 0, sample_rate_hz: int = 8000,
                  f0_step_hz: float = 0.0) -> list[ToySpeakerSpec]:
    """Random speaker families.

    Continuous mode spreads disjoint f0 bands over (70 Hz, Nyquist/8).
    Phase-locked mode (``f0_step_hz > 0``) hands out pairs of adjacent grid
    values, cycling when there are more speakers than pairs.
    """
    rng = np.random.default_rng(seed)
    top = min(sample_rate_hz / 16, 480.0)
    edges = np.geomspace(70.0, top, num_speakers + 1)
    if f0_step_hz > 0:
        values = np.arange(1, int(np.ceil(sample_rate_hz / 16 / f0_step_hz))) * f0_step_hz
        pairs = [tuple(values[i:i + 2]) for i in range(0, len(values) - 1, 2)] or [(values[0], values[0])]
    specs = []
    for s in range(num_speakers):
        if f0_step_hz > 0:
            band = pairs[s % len(pairs)]
        else:
            width = edges[s + 1] - edges[s]
            band = (edges[s] + 0.1 * width, edges[s + 1] - 0.1 * width)
        formants = tuple(
            (float(rng.uniform(*r)), float(rng.uniform(80, 250)))
            for r in ((300, 900), (1000, 2200), (2300, 3400))
        )
        specs.append(ToySpeakerSpec(
            f0_range_hz=(float(band[0]), float(band[1])),
            harmonic_decay=float(rng.uniform(0.5, 1.5)),
            formants=formants,
            am_rate_hz=float(rng.uniform(2.0, 6.0)),
            pause_prob=0.15,
            f0_step_hz=f0_step_hz,
            phase_seed=int(rng.integers(2**31)),
        ))
    return specs


def _split_counts(n: int) -> tuple[int, int, int]:
    train = int(round(0.8 * n))
    dev = int(round(0.1 * n))
    return train, dev, n - train - dev


def build_datasets(num_speakers: int, utterances_per_speaker: int, duration_s: float,
                   seed: int = 0, sample_rate_hz: int = 8000,
                   speakers: list[ToySpeakerSpec] | None = None) -> Corpus:
    """Single-speaker and mixture sets with an 80/10/10 per-speaker split.

    Every utterance appears as the first source of one mixture whose second
    source is a random same-split utterance of a different speaker.
    """
    if num_speakers < 2:
        raise ValueError(f"need at least 2 speakers, got {num_speakers}")
    if utterances_per_speaker < 1:
        raise ValueError("need at least one utterance per speaker")
    speakers = speakers or make_speakers(num_speakers, seed, sample_rate_hz)
    if len(speakers) != num_speakers:
        raise ValueError(f"{len(speakers)} speaker specs for {num_speakers} speakers")
    rng = np.random.default_rng(seed)

    singles = []
    for s, spec in enumerate(speakers):
        train, dev, _ = _split_counts(utterances_per_speaker)
        for u in range(utterances_per_speaker):
            split = "train" if u < train else "dev" if u < train + dev else "test"
            utt_seed = int(rng.integers(2**31))
            wav = synth_utterance(spec, utt_seed, duration_s, sample_rate_hz)
            singles.append(Utterance(f"spk{s:02d}_utt{u:04d}", s, split, wav))

    mixtures = []
    for split in SPLITS:
        pool = [u for u in singles if u.split == split]
        for first in pool:
            others = [u for u in pool if u.speaker != first.speaker]
            if not others:
                continue
            second = others[int(rng.integers(len(others)))]
            y = Waveform(first.waveform.samples + second.waveform.samples, sample_rate_hz)
            mixtures.append(MixturePair(f"{first.uid}__{second.uid}", y, first.waveform,
                                        second.waveform, (first.speaker, second.speaker), split))
    return Corpus(singles, mixtures)


# --------------------------------------------------------------------------- disk layout


def write_corpus(corpus: Corpus, root: str | Path) -> None:
    """Write ``<root>/<split>/{mix,s1,s2}/*.wav``, ``<root>/single/*.wav`` and manifests.

    Manifests are JSON lines with ``path``, ``speaker`` and ``split`` fields.
    """
    root = Path(root)
    (root / "single").mkdir(parents=True, exist_ok=True)
    with open(root / "singles.jsonl", "w") as f:
        for u in corpus.singles:
            path = Path("single") / f"{u.uid}.wav"
            write_wav(root / path, u.waveform)
            f.write(json.dumps({"path": str(path), "speaker": u.speaker, "split": u.split}) + "\n")
    with open(root / "mixtures.jsonl", "w") as f:
        for p in corpus.mixtures:
            rec = {"split": p.split, "speaker": list(p.speakers)}
            for sub, wav in (("mix", p.y), ("s1", p.x1), ("s2", p.x2)):
                d = root / p.split / sub
                d.mkdir(parents=True, exist_ok=True)
                write_wav(d / f"{p.uid}.wav", wav)
                rec[sub] = str(Path(p.split) / sub / f"{p.uid}.wav")
            rec["path"] = rec["mix"]
            f.write(json.dumps(rec) + "\n")


def load_singles(root: str | Path) -> list[Utterance]:
    root = Path(root)
    manifest = root / "singles.jsonl"
    if not manifest.exists():
        raise DataError(f"missing manifest {manifest}")
    out = []
    for line in manifest.read_text().splitlines():
        rec = json.loads(line)
        path = root / rec["path"]
        if not path.exists():
            raise DataError(f"manifest entry {rec['path']} has no file")
        out.append(Utterance(Path(rec["path"]).stem, int(rec["speaker"]), rec["split"], read_wav(path)))
    return out


def load_wav_corpus(root: str | Path, tolerance: float = 1e-3):
    """Load ``mix/``, ``s1/``, ``s2/`` folders (directly under ``root`` or per split).

    Returns ``(mixtures, rejected)``; a triple is rejected when
    ``max |y - (x1 + x2)|`` exceeds ``tolerance``.
    """
    root = Path(root)
    dirs = [(root, "train")] if (root / "mix").is_dir() else [
        (root / s, s) for s in SPLITS if (root / s / "mix").is_dir()
    ]
    mixtures, rejected = [], []
    for base, split in dirs:
        for path in sorted((base / "mix").glob("*.wav")):
            parts = {}
            for sub in ("s1", "s2"):
                other = base / sub / path.name
                if not other.exists():
                    raise DataError(f"{path} has no counterpart {other}")
                parts[sub] = read_wav(other)
            y = read_wav(path)
            x1, x2 = parts["s1"], parts["s2"]
            if len(x1) != len(y) or len(x2) != len(y) or not (
                y.sample_rate_hz == x1.sample_rate_hz == x2.sample_rate_hz
            ):
                rejected.append(str(path))
                continue
            if np.max(np.abs(y.samples - x1.samples - x2.samples), initial=0.0) > tolerance:
                log.warning("rejecting %s: mixture is not the sum of its sources", path)
                rejected.append(str(path))
                continue
            mixtures.append(MixturePair(path.stem, y, x1, x2, split=split))
    return mixtures, rejected
