"""Fixed-width packing of base tokens.

Layout (little-endian integers)::

    offset  size  field
    0       4     magic b"CSTK"
    4       1     version (1)
    5       4     sample_rate_hz      u32
    9       4     token_rate_num      u32
    13      4     token_rate_den      u32
    17      1     num_streams         u8
    18      4     codebook_size M     u32
    22      4     frame_count T       u32
    26      ...   payload

The payload holds ``T * num_streams`` fields of ``ceil(log2 M)`` bits, most
significant bit first, frame-major (frame t: stream 1, stream 2, ...). Each
field stores ``token - 1``. The last byte is zero-padded.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import BitstreamError

MAGIC = b"CSTK"
VERSION = 1
_HEADER = struct.Struct("<4sBIIIBII")
HEADER_SIZE = _HEADER.size  # 26
_U32_MAX = 2**32 - 1


def bits_per_token(codebook_size: int) -> int:
    if codebook_size < 2:
        raise ValueError(f"codebook size must be >= 2, got {codebook_size}")
    return math.ceil(math.log2(codebook_size))


def payload_bytes(frames: int, streams: int, codebook_size: int) -> int:
    return -(-frames * streams * bits_per_token(codebook_size) // 8)


@dataclass(frozen=True)
class TokenBitstream:
    sample_rate_hz: int
    token_rate: Fraction
    codebook_size: int
    tokens: np.ndarray  # (num_streams, T), 1-based

    @property
    def num_streams(self) -> int:
        return self.tokens.shape[0]

    @property
    def frame_count(self) -> int:
        return self.tokens.shape[1]

    def to_bytes(self) -> bytes:
        return pack(self.tokens, sample_rate_hz=self.sample_rate_hz,
                    token_rate=self.token_rate, codebook_size=self.codebook_size)

    def __eq__(self, other):
        if not isinstance(other, TokenBitstream):
            return NotImplemented
        return (self.sample_rate_hz, self.token_rate, self.codebook_size) == (
            other.sample_rate_hz, other.token_rate, other.codebook_size
        ) and np.array_equal(self.tokens, other.tokens)


def pack(tokens, *, sample_rate_hz: int, token_rate, codebook_size: int) -> bytes:
    """Serialise a ``(num_streams, T)`` matrix of 1-based tokens."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise ValueError(f"tokens must be (num_streams, T), got shape {tokens.shape}")
    streams, frames = tokens.shape
    width = bits_per_token(codebook_size)
    rate = Fraction(token_rate)
    for name, value in (("sample_rate_hz", sample_rate_hz), ("token_rate numerator", rate.numerator),
                        ("token_rate denominator", rate.denominator), ("codebook_size", codebook_size),
                        ("frame_count", frames)):
        if not 0 <= value <= _U32_MAX:
            raise ValueError(f"{name}={value} does not fit in u32")
    if not 1 <= streams <= 255:
        raise ValueError(f"num_streams must be in 1..255, got {streams}")
    if tokens.size and (tokens.min() < 1 or tokens.max() > codebook_size):
        raise ValueError(f"tokens must lie in 1..{codebook_size}")
    header = _HEADER.pack(MAGIC, VERSION, sample_rate_hz, rate.numerator, rate.denominator,
                          streams, codebook_size, frames)
    values = (tokens.T.reshape(-1).astype(np.uint64) - 1)
    shifts = np.arange(width - 1, -1, -1, dtype=np.uint64)
    bits = ((values[:, None] >> shifts) & 1).astype(np.uint8).reshape(-1)
    return header + np.packbits(bits).tobytes()


def unpack(data: bytes) -> TokenBitstream:
    """Parse and validate a bitstream produced by :func:`pack`.

    Raises:
        BitstreamError: on bad magic/version, inconsistent header fields,
            truncation, trailing bytes, nonzero padding or out-of-range tokens.
    """
    data = bytes(data)
    if len(data) < HEADER_SIZE:
        raise BitstreamError(f"truncated header: {len(data)} of {HEADER_SIZE} bytes", len(data))
    magic, version, rate_hz, num, den, streams, m, frames = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BitstreamError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise BitstreamError(f"unsupported version {version}", 4)
    if den == 0:
        raise BitstreamError("token rate denominator is zero", 13)
    if streams == 0:
        raise BitstreamError("stream count is zero", 17)
    if m < 2:
        raise BitstreamError(f"codebook size {m} < 2", 18)
    width = bits_per_token(m)
    nbits = frames * streams * width
    expected = HEADER_SIZE + -(-nbits // 8)
    if len(data) < expected:
        raise BitstreamError(f"truncated payload: {len(data)} of {expected} bytes", len(data))
    if len(data) > expected:
        raise BitstreamError(f"{len(data) - expected} trailing bytes", expected)
    payload = np.frombuffer(data, dtype=np.uint8, offset=HEADER_SIZE)
    bits = np.unpackbits(payload)
    if bits[nbits:].any():
        raise BitstreamError("nonzero padding bits", expected - 1)
    fields = bits[:nbits].reshape(-1, width).astype(np.uint64)
    values = fields @ (np.uint64(1) << np.arange(width - 1, -1, -1, dtype=np.uint64))
    bad = np.flatnonzero(values >= m)
    if bad.size:
        raise BitstreamError(f"token value {int(values[bad[0]]) + 1} exceeds M={m}",
                             HEADER_SIZE + int(bad[0]) * width // 8)
    tokens = (values.astype(np.int64) + 1).reshape(frames, streams).T.copy()
    return TokenBitstream(rate_hz, Fraction(num, den), m, tokens)


def bitrate_of(token_rate, codebook_size: int, streams: int, stages: int) -> Fraction:
    """Bits per second of ``streams`` x ``stages`` fixed-width token streams."""
    rate = Fraction(token_rate)
    if rate <= 0 or streams < 1 or stages < 1:
        raise ValueError("token rate, streams and stages must be positive")
    return rate * bits_per_token(codebook_size) * streams * stages
