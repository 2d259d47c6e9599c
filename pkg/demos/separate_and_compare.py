"""Joint separation and compression against the two cascades.

Trains all four desk models on a toy two-speaker corpus, then compares, at
the same total bitrate:

  jsac  the mixture goes straight to one base-token stream per speaker
  fcts  compress the mixture, then separate the decoded audio
  fstc  separate first, then compress each estimate

Writes the separated WAVs of one test mixture to ./demo_out. Expect around
twenty minutes on one CPU core.
"""
import logging
from pathlib import Path

from codesep import TrainConfig, build_datasets, evaluate, jsac_encode, jsac_separate, make_speakers, write_wav
from codesep.train import train_atsp, train_btd, train_codec, train_separator

logging.basicConfig(level=logging.INFO, format="%(message)s")

corpus = build_datasets(4, 60, 2.0, seed=0, speakers=make_speakers(4, 0, 8000, 100.0))
train, test = corpus.split("train"), corpus.split("test")
singles = [u.waveform for u in train.singles]

cfg = TrainConfig(log_interval=250)
codec = train_codec(cfg.replace(max_steps=5000), singles).model
staged = cfg.replace(codec_checkpoint="in-memory")
# absolute positional encoding: train BTD on whole utterances, not short crops
btd = train_btd(staged.replace(stage="btd", max_steps=1500, crop_samples=16000, batch_size=8), codec,
                train.mixtures).model
atsp = train_atsp(staged.replace(stage="atsp", max_steps=1500), codec, singles).model
separator = train_separator(cfg.replace(stage="separator", max_steps=800), train.mixtures).model
models = dict(codec=codec, btd=btd, atsp=atsp, separator=separator)

jsac = evaluate("jsac", test.mixtures, **models, bitrate_bps=None)
rate = jsac.bitrate_bps["total_bps"]
print(f"\nall systems at {rate:g} bps total")
for report in (jsac, evaluate("fcts", test.mixtures, **models, bitrate_bps=rate),
               evaluate("fstc", test.mixtures, **models, bitrate_bps=rate)):
    agg = report.aggregate()
    print(f"  {report.mode}: SI-SDRi {agg['si_sdri']:5.2f} dB   mel distance {agg['mel_distance']:.3f}")

out = Path("demo_out")
out.mkdir(exist_ok=True)
pair = test.mixtures[0]
s1, s2 = jsac_separate(pair.y, btd, atsp, codec)
write_wav(out / "mixture.wav", pair.y)
write_wav(out / "s1.wav", s1)
write_wav(out / "s2.wav", s2)
bs = jsac_encode(pair.y, btd, codec)
(out / "tokens.cstk").write_bytes(bs.to_bytes())
print(f"wrote {out}/: {len(pair.y) / 8000:.1f} s mixture carried in {len((out / 'tokens.cstk').read_bytes())} bytes")
