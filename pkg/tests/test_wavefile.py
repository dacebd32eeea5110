"""WAV writer/reader tests."""

import struct

import numpy as np
import pytest

from mrdaw.wavefile import read_wav_float32, write_wav_float32


def test_round_trip(tmp_path):
    path = tmp_path / "out.wav"
    samples = np.linspace(-1, 1, 777)
    write_wav_float32(path, samples, 48000)
    back, rate = read_wav_float32(path)
    assert rate == 48000
    np.testing.assert_array_equal(back, samples.astype(np.float32).astype(np.float64))


def test_header_bytes(tmp_path):
    path = tmp_path / "h.wav"
    write_wav_float32(path, np.zeros(4), 48000)
    raw = path.read_bytes()
    assert raw[:4] == b"RIFF"
    assert raw[8:12] == b"WAVE"
    assert raw[12:16] == b"fmt "
    fmt_size, tag, channels, rate = struct.unpack_from("<IHHI", raw, 16)
    assert (fmt_size, tag, channels, rate) == (16, 3, 1, 48000)
    bits = struct.unpack_from("<H", raw, 34)[0]
    assert bits == 32
    assert raw[36:40] == b"data"
    assert struct.unpack_from("<I", raw, 40)[0] == 16
    assert len(raw) == 44 + 16
    (riff_size,) = struct.unpack_from("<I", raw, 4)
    assert riff_size == len(raw) - 8


def test_write_is_deterministic(tmp_path):
    a, b = tmp_path / "a.wav", tmp_path / "b.wav"
    samples = np.sin(np.arange(1000) * 0.01)
    write_wav_float32(a, samples, 44100)
    write_wav_float32(b, samples, 44100)
    assert a.read_bytes() == b.read_bytes()


def test_read_rejects_garbage(tmp_path):
    p = tmp_path / "bad.wav"
    p.write_bytes(b"not a wav at all")
    with pytest.raises(ValueError):
        read_wav_float32(p)


def test_read_rejects_integer_pcm(tmp_path):
    p = tmp_path / "pcm.wav"
    payload = struct.pack("<4h", 0, 1, -1, 2)
    header = b"".join(
        [
            b"RIFF",
            struct.pack("<I", 36 + len(payload)),
            b"WAVE",
            b"fmt ",
            struct.pack("<IHHIIHH", 16, 1, 1, 48000, 96000, 2, 16),
            b"data",
            struct.pack("<I", len(payload)),
        ]
    )
    p.write_bytes(header + payload)
    with pytest.raises(ValueError):
        read_wav_float32(p)


def test_writer_validation(tmp_path):
    with pytest.raises(ValueError):
        write_wav_float32(tmp_path / "x.wav", np.zeros((2, 2)), 48000)
    with pytest.raises(ValueError):
        write_wav_float32(tmp_path / "x.wav", np.zeros(4), 0)
