"""Sample-accurate loop audio: capture, phase-aligned finalize, and mixing.

All audio is mono float64 in [-1, 1] internally; conversion to float32
happens only at the WAV boundary. The mix is deterministic: tracks are summed
in ascending index order and hard-clamped once, after summation, so a given
(state, loop store, live input) triple always produces identical bytes.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from .session import SessionState, TrackVariant, Transport

logger = logging.getLogger(__name__)

DEFAULT_BLOCK = 256


class EmptyCaptureError(ValueError):
    """Raised when finalizing a capture that holds no samples."""


@dataclass(frozen=True, eq=False, slots=True)
class LoopBuffer:
    """A finalized loop, exactly master-length samples long."""

    samples: np.ndarray

    def __post_init__(self) -> None:
        if self.samples.ndim != 1 or len(self.samples) == 0:
            raise ValueError("loop length must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("loop samples must be finite")

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(slots=True)
class CaptureBuffer:
    """An in-progress recording: an append-only list of input blocks.

    ``start_phase`` is the offset of the capture start within the master
    loop, filled in at finalize time once the loop grid is known.
    """

    user: int
    track: int
    started_at: int
    start_phase: int = 0
    _blocks: list[np.ndarray] = field(default_factory=list)

    @property
    def length(self) -> int:
        return sum(len(b) for b in self._blocks)

    def samples(self) -> np.ndarray:
        if not self._blocks:
            return np.zeros(0)
        return np.concatenate(self._blocks)


def capture_append(cap: CaptureBuffer, block: np.ndarray) -> None:
    """Append a block of live input to an open capture, verbatim."""
    arr = np.asarray(block, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError("capture blocks must be 1-D")
    if len(arr):
        cap._blocks.append(arr)


def finalize_loop(
    cap: CaptureBuffer, master_len: int | None
) -> tuple[LoopBuffer, int]:
    """Turn a capture into a loop buffer aligned to the master grid.

    The first finalized capture of a session (``master_len is None``) becomes
    the master loop verbatim and defines the length. Later captures are laid
    into a zeroed master-length buffer at their start phase: sample k of the
    capture lands at (start_phase + k) mod L, for k < min(len, L). Longer
    takes are trimmed, shorter ones leave the remainder silent.
    """
    data = cap.samples()
    if len(data) == 0:
        raise EmptyCaptureError(f"capture on track {cap.track} is empty")
    if master_len is None:
        return LoopBuffer(samples=data.copy()), len(data)
    buf = np.zeros(master_len)
    n = min(len(data), master_len)
    idx = (cap.start_phase + np.arange(n)) % master_len
    buf[idx] = data[:n]
    return LoopBuffer(samples=buf), master_len


LoopStore = dict[int, LoopBuffer]


def _playing_tracks(state: SessionState) -> list[int]:
    return [
        i
        for i, tr in enumerate(state.tracks)
        if tr.variant is TrackVariant.PLAYING
    ]


def mix_tick(
    state: SessionState,
    store: LoopStore,
    live: dict[int, np.ndarray] | None,
    block_size: int = DEFAULT_BLOCK,
) -> tuple[dict[int, np.ndarray], int]:
    """Mix one block: per-user output and the advanced playhead.

    Each user hears the shared loop mix plus the talkback feed of every
    *other* user's live input — never their own. Missing live input for a
    user is treated as silence.
    """
    if block_size <= 0:
        raise ValueError("block_size must be positive")
    cfg = state.config
    live = live or {}
    live_arrs: dict[int, np.ndarray] = {}
    for u in cfg.users():
        arr = live.get(u)
        if arr is None:
            live_arrs[u] = np.zeros(block_size)
            if live:
                logger.debug("no live input for user %d; substituting silence", u)
            continue
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape != (block_size,):
            raise ValueError(
                f"live input for user {u} has shape {arr.shape}, expected ({block_size},)"
            )
        live_arrs[u] = arr

    loop_sum = np.zeros(block_size)
    new_playhead = state.playhead
    if state.transport is Transport.PLAYING:
        playing = _playing_tracks(state)
        if playing:
            assert state.master_len is not None, "playing tracks without master length"
        if state.master_len is not None:
            L = state.master_len
            idx = (state.playhead + np.arange(block_size)) % L
            for i in playing:
                ref = state.tracks[i].content_ref
                loop_sum += cfg.track_gains[i] * store[ref].samples[idx]
            new_playhead = (state.playhead + block_size) % L

    outs: dict[int, np.ndarray] = {}
    for u in cfg.users():
        others = [live_arrs[v] for v in cfg.users() if v != u]
        mix = loop_sum.copy()
        if others and cfg.talk_gain != 0.0:
            mix += cfg.talk_gain * np.add.reduce(others)
        outs[u] = np.clip(mix, -1.0, 1.0)
    return outs, new_playhead


def render_session(
    state: SessionState,
    store: LoopStore,
    duration: int,
    block_size: int = DEFAULT_BLOCK,
) -> dict[int, np.ndarray]:
    """Render ``duration`` samples per user from a state snapshot.

    Defined as the concatenation of successive mix_tick outputs with silent
    live inputs, starting at the snapshot's playhead. The snapshot itself is
    not modified.
    """
    if duration < 0:
        raise ValueError("duration must be >= 0")
    cfg = state.config
    if duration == 0:
        return {u: np.zeros(0) for u in cfg.users()}
    chunks: dict[int, list[np.ndarray]] = {u: [] for u in cfg.users()}
    cursor = state
    remaining = duration
    while remaining > 0:
        outs, ph = mix_tick(cursor, store, None, block_size)
        for u, block in outs.items():
            chunks[u].append(block)
        cursor = dataclasses.replace(cursor, playhead=ph)
        remaining -= block_size
    return {u: np.concatenate(chunks[u])[:duration] for u in cfg.users()}
