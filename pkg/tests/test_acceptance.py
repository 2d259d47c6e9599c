"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the verdict lines
alongside the test results.
"""
import json
import math
import shutil
import time
from fractions import Fraction

import numpy as np
import pytest
import torch

from codesep import cli
from codesep.atsp import sub_predictor_input, teacher_forcing_ce
from codesep.bitstream import HEADER_SIZE, bitrate_of, pack, payload_bytes, unpack
from codesep.btd import BTDConfig, BTDModel, btd_forward, pi_ce_loss
from codesep.codec import reconstruct
from codesep.config import TrainConfig
from codesep.data import build_datasets, make_speakers
from codesep.dsp import Waveform, imdct, mdct
from codesep.errors import BitstreamError
from codesep.evalkit import mel_distance
from codesep.pipeline import evaluate
from codesep.rvq import ResidualQuantizer, lookup, quantize
from codesep.train import train_atsp, train_btd, train_codec, train_separator
from oracles import lookup_sum, pi_ce_brute, rvq_brute

STAGE_BUDGET_S = 30 * 60


@pytest.fixture
def verdict(capsys):
    def emit(number, label, ok, detail=""):
        with capsys.disabled():
            print(f"\n[{number}] {'PASS' if ok else 'FAIL'} {label}" + (f" ({detail})" if detail else ""))
        assert ok, f"criterion {number} failed: {label} {detail}"

    return emit


def probs(rng, t, m):
    p = rng.random((t, m)) + 1e-3
    return p / p.sum(1, keepdims=True)


def test_1_mdct_round_trip(verdict):
    rng = np.random.default_rng(1)
    sr, frame = 16000, 320
    worst = 0.0
    start = time.perf_counter()
    for _ in range(100):
        x = rng.uniform(-1, 1, sr)
        y = imdct(mdct(Waveform(x, sr), frame)).samples
        worst = max(worst, float(np.max(np.abs(y - x))))
    elapsed = time.perf_counter() - start
    verdict(1, "MDCT round trip", worst < 1e-6 and elapsed < 10, f"max err {worst:.2e}, {elapsed:.2f} s")


def test_2_rvq_nearest_neighbour(verdict):
    rng = np.random.default_rng(2)
    violations = 0
    for _ in range(10_000):
        n, m, k = rng.integers(2, 5), rng.integers(2, 17), rng.integers(1, 7)
        books = rng.standard_normal((n, m, k))
        res = quantize(rng.standard_normal(k), ResidualQuantizer(n, m, k, torch.from_numpy(books)))
        for stage in range(n):
            dist = np.sum((books[stage] - res.residuals[stage]) ** 2, axis=1)
            chosen = dist[res.tokens[stage] - 1]
            if chosen > dist.min() or np.argmax(dist == chosen) != res.tokens[stage] - 1:
                violations += 1
    books = np.array([[[-1.0], [1.0]], [[-0.25], [0.25]]])
    res = quantize(np.array([0.6]), ResidualQuantizer(2, 2, 1, torch.from_numpy(books)))
    tokens, total, _ = rvq_brute(np.array([0.6]), books)
    example = res.tokens.tolist() == [2, 1] == tokens.tolist() and res.quantized[0] == 0.75 == total[0]
    verdict(2, "RVQ nearest-neighbour invariant and worked example", violations == 0 and example,
            f"{violations} violations")


def test_3_pi_ce(verdict):
    rng = np.random.default_rng(3)
    worst, asym = 0.0, 0
    for _ in range(1000):
        t, m = rng.integers(1, 9), rng.integers(2, 33)
        p1, p2 = probs(rng, t, m), probs(rng, t, m)
        a, b = rng.integers(1, m + 1, t), rng.integers(1, m + 1, t)
        got = pi_ce_loss(p1, p2, a, b)
        worst = max(worst, abs(got - pi_ce_brute(p1, p2, a, b)))
        asym += got != pi_ce_loss(p1, p2, b, a)
    uniform_ok = True
    for m in (2, 64, 1024):
        u = np.full((4, m), 1 / m)
        t = rng.integers(1, m + 1, 4)
        uniform_ok &= abs(pi_ce_loss(u, u, t, t[::-1]) - 2 * math.log(m)) <= 1e-12
    logits = torch.from_numpy(rng.standard_normal((2, 6, 5))).requires_grad_()
    a, b = torch.from_numpy(rng.integers(1, 6, 6)), torch.from_numpy(rng.integers(1, 6, 6))

    def f(z):
        lp = torch.log_softmax(z, -1)
        return pi_ce_loss(lp[0], lp[1], a, b, log_probs=True)

    grad_ok = torch.autograd.gradcheck(f, (logits,), eps=1e-6, atol=1e-8, rtol=1e-3, raise_exception=False)
    verdict(3, "PI-CE brute-force equivalence, symmetry, 2 ln M, gradient",
            worst <= 1e-9 and asym == 0 and uniform_ok and grad_ok, f"max diff {worst:.1e}")


def test_4_sub_predictor_input(verdict):
    rng = np.random.default_rng(4)
    worst, first_exact = 0.0, True
    for _ in range(1000):
        stages, m, k = int(rng.integers(2, 6)), int(rng.integers(2, 17)), int(rng.integers(1, 9))
        books = rng.standard_normal((stages, m, k))
        q = ResidualQuantizer(stages, m, k, torch.from_numpy(books))
        n = int(rng.integers(1, stages))
        base = int(rng.integers(1, m + 1))
        prefix = rng.integers(1, m + 1, n - 1).tolist()
        worst = max(worst, float(np.max(np.abs(sub_predictor_input(base, prefix, q, n)
                                                - lookup_sum(base, prefix, books)))))
        first_exact &= np.array_equal(sub_predictor_input(base, [], q, 1), lookup(base, books[0]))
    verdict(4, "sub-predictor input equals lookup sum", worst <= 1e-9 and first_exact, f"max diff {worst:.1e}")


def test_5_teacher_forcing_ce(verdict):
    rng = np.random.default_rng(5)
    ok = True
    for n, t, m in ((2, 3, 2), (4, 7, 1024), (8, 5, 64)):
        targets = rng.integers(1, m + 1, (n - 1, t))
        uniform = np.full((n - 1, t, m), 1 / m)
        ok &= abs(teacher_forcing_ce(uniform, targets) - (n - 1) * math.log(m)) <= 1e-9
        perfect = np.zeros((n - 1, t, m))
        np.put_along_axis(perfect, targets[..., None] - 1, 1.0, axis=-1)
        ok &= teacher_forcing_ce(perfect, targets) == 0.0
    logits = torch.from_numpy(rng.standard_normal((3, 5, 6))).requires_grad_()
    targets = torch.from_numpy(rng.integers(1, 7, (3, 5)))
    grad_ok = torch.autograd.gradcheck(lambda z: teacher_forcing_ce(torch.log_softmax(z, -1), targets,
                                                                    log_probs=True),
                                       (logits,), eps=1e-6, atol=1e-8, rtol=1e-3, raise_exception=False)
    verdict(5, "teacher-forcing CE identities and gradient", ok and grad_ok)


def test_6_equivariance(verdict):
    rng = np.random.default_rng(6)
    equal_ok = swap_ok = True
    for i in range(10):
        torch.manual_seed(i)
        cfg = BTDConfig(n_mels=int(rng.integers(4, 20)), mel_shift=8, num_down=int(rng.integers(0, 3)),
                        d_model=16, n_heads=2, n_intra=int(rng.integers(1, 3)), n_inter=int(rng.integers(1, 3)),
                        codebook_size=int(rng.integers(2, 33)))
        model = BTDModel(cfg).eval()
        with torch.no_grad():
            model.delta.normal_()
        mel = rng.standard_normal((int(rng.integers(1, 6)) * 2 ** cfg.num_down, cfg.n_mels))
        p1, p2 = btd_forward(mel, model)
        with torch.no_grad():
            model.delta.copy_(model.delta.flip(0))
        q1, q2 = btd_forward(mel, model)
        swap_ok &= np.array_equal(p1, q2) and np.array_equal(p2, q1)
        with torch.no_grad():
            model.delta[1] = model.delta[0]
        e1, e2 = btd_forward(mel, model)
        equal_ok &= np.array_equal(e1, e2)
    verdict(6, "BTD equal-bias equality and bias-swap equivariance", equal_ok and swap_ok)


def test_7_bitstream(verdict):
    rng = np.random.default_rng(7)
    failures = 0
    for _ in range(10_000):
        m = int(rng.integers(2, 70_000))
        s, t = int(rng.integers(1, 5)), int(rng.integers(0, 30))
        tokens = rng.integers(1, m + 1, (s, t))
        fields = dict(sample_rate_hz=int(rng.integers(0, 2**32)),
                      token_rate=Fraction(int(rng.integers(1, 2**32)), int(rng.integers(1, 2**32))),
                      codebook_size=m)
        data = pack(tokens, **fields)
        bs = unpack(data)
        ok = (np.array_equal(bs.tokens, tokens) and bs.sample_rate_hz == fields["sample_rate_hz"]
              and bs.token_rate == fields["token_rate"] and bs.codebook_size == m
              and len(data) == HEADER_SIZE + payload_bytes(t, s, m))
        try:
            unpack(data[:int(rng.integers(0, len(data)))])
            ok = False
        except BitstreamError:
            pass
        failures += not ok
    rates = bitrate_of(100, 1024, 1, 1) == 1000 and bitrate_of(100, 1024, 2, 4) == 8000
    verdict(7, "bitstream round trip, truncation, size and bitrate", failures == 0 and rates,
            f"{failures} failures")


# --------------------------------------------------------------------------- desk end to end

E2E_STEPS = {"codec": 5000, "btd": 1500, "atsp": 1500, "separator": 800}
# BTD uses absolute positions, so it trains on whole 2 s utterances
BTD_CROP, BTD_BATCH = 16000, 8


@pytest.fixture(scope="module")
def desk():
    corpus = build_datasets(4, 60, 2.0, seed=0, speakers=make_speakers(4, 0, 8000, 100.0))
    train, test = corpus.split("train"), corpus.split("test")
    singles = [u.waveform for u in train.singles]
    base = TrainConfig(log_interval=0)
    runs, seconds = {}, {}

    def timed(name, fn):
        start = time.process_time()
        runs[name] = fn()
        seconds[name] = time.process_time() - start

    timed("codec", lambda: train_codec(base.replace(max_steps=E2E_STEPS["codec"]), singles))
    codec = runs["codec"].model
    staged = base.replace(codec_checkpoint="in-memory")
    timed("btd", lambda: train_btd(staged.replace(stage="btd", max_steps=E2E_STEPS["btd"], crop_samples=BTD_CROP,
                                                   batch_size=BTD_BATCH), codec,
                                   train.mixtures))
    timed("atsp", lambda: train_atsp(staged.replace(stage="atsp", max_steps=E2E_STEPS["atsp"]), codec, singles))
    timed("separator", lambda: train_separator(base.replace(stage="separator",
                                                            max_steps=E2E_STEPS["separator"]), train.mixtures))
    models = dict(codec=codec, btd=runs["btd"].model, atsp=runs["atsp"].model, separator=runs["separator"].model)
    return dict(corpus=corpus, test=test, runs=runs, seconds=seconds, models=models)


@pytest.mark.slow
def test_8a_losses_decrease(desk, verdict):
    drops = {}
    for name, run in desk["runs"].items():
        drops[name] = (run.losses[0], float(np.mean(run.losses[-50:])))
    ok = all(late < first for first, late in drops.values())
    budget = all(s <= STAGE_BUDGET_S for s in desk["seconds"].values())
    detail = ", ".join(f"{k} {a:.3g}->{b:.3g} in {desk['seconds'][k]:.0f}s" for k, (a, b) in drops.items())
    verdict("8a", "every stage's training loss decreases within budget", ok and budget, detail)


@pytest.mark.slow
def test_8b_jsac_improves_over_mixture(desk, verdict):
    report = evaluate("jsac", desk["test"].mixtures, **desk["models"], bitrate_bps=None)
    gain = report.aggregate()["si_sdri"]
    verdict("8b", "JSAC SI-SDR improvement >= 3 dB", gain >= 3.0, f"{gain:.2f} dB over {len(report.utterances)}")


@pytest.mark.slow
def test_8c_jsac_beats_fcts_mel(desk, verdict):
    jsac = evaluate("jsac", desk["test"].mixtures, **desk["models"], bitrate_bps=None)
    rate = jsac.bitrate_bps["total_bps"]
    fcts = evaluate("fcts", desk["test"].mixtures, **desk["models"], bitrate_bps=rate)
    a, b = jsac.aggregate()["mel_distance"], fcts.aggregate()["mel_distance"]
    verdict("8c", "JSAC mel distance below FCTS at the same rate", a < b, f"{a:.3f} vs {b:.3f} at {rate:g} bps")


@pytest.fixture(scope="module")
def depth_distances(desk):
    held_out = build_datasets(4, 15, 2.0, seed=99, speakers=make_speakers(4, 0, 8000, 100.0)).singles
    assert len(held_out) >= 50
    codec = desk["models"]["codec"]
    return [float(np.mean([mel_distance(reconstruct(u.waveform, codec, up_to=n), u.waveform) for u in held_out]))
            for n in range(1, codec.config.num_stages + 1)]


@pytest.mark.slow
def test_trained_codec_full_depth_beats_base_stage(depth_distances):
    assert depth_distances[-1] < depth_distances[0], depth_distances


@pytest.mark.slow
def test_trained_codec_refines_monotonically(depth_distances):
    assert all(b <= a for a, b in zip(depth_distances, depth_distances[1:])), depth_distances


# --------------------------------------------------------------------------- determinism


def run_pipeline(root):
    data = root / "data"
    assert cli.main(["synth-data", "--out", str(data), "--speakers", "3", "--utterances", "10", "--duration",
                     "0.6"]) == 0
    cfg = TrainConfig(data_root=str(data), max_steps=8, batch_size=4, quantizer_warmup_steps=3,
                      log_interval=0).to_dict()
    del cfg["stage"]
    (root / "cfg.json").write_text(json.dumps(cfg))
    ck = {s: root / f"{s}.ckpt" for s in ("codec", "btd", "atsp", "separator")}
    for stage, path in ck.items():
        argv = ["train", "--stage", stage, "--config", str(root / "cfg.json"), "--out", str(path)]
        assert cli.main(argv + ([] if stage in ("codec", "separator") else ["--codec", str(ck["codec"])])) == 0
    mix = sorted((data / "test" / "mix").glob("*.wav"))[0]
    assert cli.main(["separate", "--in", str(mix), "--out-dir", str(root / "sep"), "--codec", str(ck["codec"]),
                     "--btd", str(ck["btd"]), "--atsp", str(ck["atsp"])]) == 0
    assert cli.main(["baseline", "--mode", "fstc", "--bitrate", "1200", "--in", str(mix), "--out-dir",
                     str(root / "fstc"), "--codec", str(ck["codec"]), "--separator", str(ck["separator"])]) == 0
    files = sorted(p for p in root.rglob("*") if p.is_file() and p.suffix in {".ckpt", ".cstk", ".wav"})
    return {p.relative_to(root): p.read_bytes() for p in files}


def test_9_determinism(tmp_path, verdict):
    # same paths both times: the stored config records the data and codec locations
    a = run_pipeline(tmp_path / "run")
    shutil.rmtree(tmp_path / "run")
    b = run_pipeline(tmp_path / "run")
    artefacts = [p for p in a if p.suffix != ".wav" or p.parts[0] != "data"]
    same = a.keys() == b.keys() and all(a[p] == b[p] for p in a)
    kinds = {p.suffix for p in artefacts}
    verdict(9, "two seeded runs give byte-identical checkpoints, bitstreams and WAVs",
            same and kinds == {".ckpt", ".cstk", ".wav"}, f"{len(artefacts)} artefacts compared")
