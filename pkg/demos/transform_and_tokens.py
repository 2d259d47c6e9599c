"""From waveform to RVQ tokens and back, without any training.

Shows the MDCT round trip, the worked K=1 quantization example, what each
extra RVQ stage costs in bits per second, and the byte layout of a packed
token stream.
"""
import numpy as np
import torch

from codesep import ResidualQuantizer, Waveform, bitrate_of, imdct, mdct, pack, quantize, unpack

rng = np.random.default_rng(0)

x = Waveform(rng.uniform(-1, 1, 8000), 8000)
spec = mdct(x, 160)
back = imdct(spec)
print(f"MDCT: {len(x)} samples -> {spec.frames.shape} coefficients, "
      f"round-trip error {np.max(np.abs(back.samples - x.samples)):.1e}")

# two stages, two scalar codevectors each
q = ResidualQuantizer(2, 2, 1, torch.tensor([[[-1.0], [1.0]], [[-0.25], [0.25]]], dtype=torch.float64))
res = quantize(np.array([0.6]), q)
print(f"quantize(0.6): tokens {res.tokens.tolist()}, reconstruction {res.quantized[0]}, "
      f"left over {res.residuals[-1][0]:+.2f}")

print("\nbits per second at 100 tokens/s with M=64:")
for stages in (1, 2, 4):
    print(f"  {stages} stage(s): one stream {float(bitrate_of(100, 64, 1, stages)):6.0f}"
          f"   two streams {float(bitrate_of(100, 64, 2, stages)):6.0f}")

tokens = rng.integers(1, 65, (2, 5))
blob = pack(tokens, sample_rate_hz=8000, token_rate=100, codebook_size=64)
print(f"\n2 streams x 5 frames of 6-bit tokens -> {len(blob)} bytes (26-byte header)")
assert np.array_equal(unpack(blob).tokens, tokens)
