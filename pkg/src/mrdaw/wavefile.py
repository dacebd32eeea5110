"""Minimal mono IEEE-float WAV I/O.

The stdlib wave module only handles integer PCM, so the RIFF framing is done
by hand: 48 kHz (or whatever rate is asked for) mono float32, little-endian,
format tag 3. Writes are deterministic byte-for-byte for given samples.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

_FORMAT_IEEE_FLOAT = 3


def write_wav_float32(path: str | Path, samples: np.ndarray, sample_rate: int) -> None:
    if sample_rate <= 0:
        raise ValueError("sample_rate must be positive")
    data = np.asarray(samples, dtype=np.float32)
    if data.ndim != 1:
        raise ValueError("expected mono 1-D samples")
    payload = data.tobytes()  # float32 little-endian on every supported platform
    byte_rate = sample_rate * 4
    header = b"".join(
        [
            b"RIFF",
            struct.pack("<I", 36 + len(payload)),
            b"WAVE",
            b"fmt ",
            struct.pack(
                "<IHHIIHH",
                16,
                _FORMAT_IEEE_FLOAT,
                1,  # mono
                sample_rate,
                byte_rate,
                4,  # block align
                32,  # bits per sample
            ),
            b"data",
            struct.pack("<I", len(payload)),
        ]
    )
    Path(path).write_bytes(header + payload)


def read_wav_float32(path: str | Path) -> tuple[np.ndarray, int]:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise ValueError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        cid = raw[pos : pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8 : pos + 8 + size]
        if cid == b"fmt ":
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned
    if fmt is None or data is None:
        raise ValueError(f"{path}: missing fmt or data chunk")
    tag, channels, rate, _, _, bits = fmt
    if tag != _FORMAT_IEEE_FLOAT or bits != 32:
        raise ValueError(f"{path}: expected float32 data, got tag={tag} bits={bits}")
    if channels != 1:
        raise ValueError(f"{path}: expected mono, got {channels} channels")
    return np.frombuffer(data, dtype="<f4").astype(np.float64), rate
