"""Control-plane core shared by the network server and the simulator.

A SessionHost owns the authoritative sample clock and wires the pieces
together: control events go through the pure state machine, capture/finalize
effects are executed against the loop store, and the remaining effects are
dispatched to whatever DAW backend is attached. Both the wall-clock server
and the virtual-time simulator drive it the same way: ``advance(n)`` between
happenings, ``apply(event)`` at them.
"""

from __future__ import annotations

import dataclasses
import logging
from collections import deque
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .backend import DawBackend, NullBackend, dispatch
from .engine import (
    DEFAULT_BLOCK,
    CaptureBuffer,
    LoopStore,
    capture_append,
    finalize_loop,
    mix_tick,
    render_session,
)
from .session import (
    Broadcast,
    ControlEvent,
    Diagnostic,
    Effect,
    SessionConfig,
    SessionState,
    StartCapture,
    StopCaptureAndFinalize,
    TrackVariant,
    Transport,
    apply_event,
)
from .wavefile import write_wav_float32

logger = logging.getLogger(__name__)

#: (user, start_sample, num_samples) -> that user's live input block
InputFeed = Callable[[int, int, int], np.ndarray]


def silence_feed(user: int, start: int, n: int) -> np.ndarray:
    return np.zeros(n)


def make_synth_feed(sample_rate: int, amp: float = 0.25) -> InputFeed:
    """A deterministic per-user test tone; distinct frequency per user."""

    def feed(user: int, start: int, n: int) -> np.ndarray:
        freq = 180.0 + 70.0 * user
        t = np.arange(start, start + n)
        return amp * np.sin(2.0 * np.pi * freq * t / sample_rate)

    return feed


def make_wav_feed(sources: dict[int, np.ndarray]) -> InputFeed:
    """Loop pre-loaded sample arrays as the users' live inputs."""

    def feed(user: int, start: int, n: int) -> np.ndarray:
        data = sources.get(user)
        if data is None or len(data) == 0:
            return np.zeros(n)
        idx = (start + np.arange(n)) % len(data)
        return data[idx]

    return feed


def state_payload(state: SessionState) -> dict:
    """The semantic snapshot clients see: no playhead, no internal counters.

    Cursor keys are strings so the payload survives a JSON round trip
    unchanged.
    """
    cfg = state.config
    return {
        "transport": state.transport.value,
        "looplen": state.master_len or 0,
        "sample_rate": cfg.sample_rate,
        "tracks": [
            {"index": i, "state": tr.variant.value, "owner": cfg.owner_of(i)}
            for i, tr in enumerate(state.tracks)
        ],
        "cursors": {str(u): state.cursor_of(u) for u in cfg.users()},
    }


class SessionHost:
    """Authoritative session instance: state machine + loop store + backend."""

    def __init__(
        self,
        config: SessionConfig,
        backend: Optional[DawBackend] = None,
        input_feed: Optional[InputFeed] = None,
        block_size: int = DEFAULT_BLOCK,
    ) -> None:
        self.config = config
        self.state = SessionState.fresh(config)
        self.backend = backend or NullBackend()
        self.input_feed = input_feed or silence_feed
        self.block_size = block_size
        self.clock = 0
        self.loops: LoopStore = {}
        self.captures: dict[int, CaptureBuffer] = {}
        self.dirty = True  # a fresh snapshot has never been broadcast
        self.diagnostics: deque[str] = deque(maxlen=100)

    # -- control plane -------------------------------------------------------

    def apply(self, ev: ControlEvent) -> list[Effect]:
        """Apply one event stamped at the current clock and run its effects."""
        if ev.t != self.clock:
            raise ValueError(
                f"event stamped t={ev.t} but host clock is {self.clock}; "
                "advance() first"
            )
        pre = self.state
        post, effects = apply_event(pre, ev)
        self.state = post
        for eff in effects:
            if isinstance(eff, StartCapture):
                self.captures[eff.track] = CaptureBuffer(
                    user=eff.user, track=eff.track, started_at=ev.t
                )
            elif isinstance(eff, StopCaptureAndFinalize):
                self._finalize(eff.track, pre, post)
            elif isinstance(eff, Broadcast):
                self.dirty = True
            elif isinstance(eff, Diagnostic):
                self.diagnostics.append(eff.message)
                logger.warning("session: %s", eff.message)
        # Drop captures whose track is no longer recording (e.g. a
        # zero-length take reverted the slot without a finalize).
        for track in [
            t
            for t in self.captures
            if self.state.tracks[t].variant is not TrackVariant.RECORDING
        ]:
            del self.captures[track]
        dispatch(effects, self.backend)
        return effects

    def _finalize(self, track: int, pre: SessionState, post: SessionState) -> None:
        cap = self.captures.pop(track)
        assert post.master_len is not None
        if pre.master_len is not None:
            cap.start_phase = (cap.started_at - post.epoch) % post.master_len
        loop, new_len = finalize_loop(cap, pre.master_len)
        # Cross-check: the state machine derived the length from timestamps,
        # the engine from actual samples fed. They must agree.
        assert new_len == post.master_len, (
            f"finalized length {new_len} != master length {post.master_len}"
        )
        ref = post.tracks[track].content_ref
        assert ref is not None
        self.loops[ref] = loop

    # -- audio plane ---------------------------------------------------------

    def _feeding(self) -> bool:
        return self.state.master_len is None or self.state.transport is Transport.PLAYING

    def advance(
        self, n: int, collect_audio: bool = False
    ) -> Optional[dict[int, np.ndarray]]:
        """Move the clock forward ``n`` samples.

        Feeds open captures from the live inputs, advances the playhead, and
        ticks the backend. With ``collect_audio`` the per-user monitor mix for
        the span is computed and returned (n then plays the role of one audio
        block).
        """
        if n < 0:
            raise ValueError("cannot advance backwards")
        if n == 0:
            return None
        live: Optional[dict[int, np.ndarray]] = None
        if collect_audio or self.backend.wants_audio or (
            self.captures and self._feeding()
        ):
            live = {
                u: self.input_feed(u, self.clock, n) for u in self.config.users()
            }
            for u, block in live.items():
                if block.shape != (n,):
                    raise ValueError(
                        f"input feed for user {u} returned shape {block.shape}, "
                        f"expected ({n},)"
                    )
        outs = None
        if self.captures and self._feeding():
            assert live is not None
            for cap in self.captures.values():
                capture_append(cap, live[cap.user])
        if collect_audio:
            outs, playhead = mix_tick(self.state, self.loops, live, n)
        else:
            playhead = self.state.playhead
            if self.state.transport is Transport.PLAYING and self.state.master_len:
                playhead = (playhead + n) % self.state.master_len
        if playhead != self.state.playhead:
            self.state = dataclasses.replace(self.state, playhead=playhead)
        self.backend.tick(live, n)
        self.clock += n
        return outs

    # -- derived views -------------------------------------------------------

    def payload(self) -> dict:
        return state_payload(self.state)

    def render(self, duration: int) -> dict[int, np.ndarray]:
        return render_session(self.state, self.loops, duration, self.block_size)

    def export_wav(self, directory: str | Path, prefix: str = "mrdaw") -> list[Path]:
        """Write one loop period per user, rendered from the downbeat.

        Deterministic for a given session state; raises if no loop has been
        finalized yet.
        """
        if self.state.master_len is None:
            raise RuntimeError("nothing to export: no loop finalized yet")
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        aligned = dataclasses.replace(self.state, playhead=0)
        outs = render_session(aligned, self.loops, self.state.master_len, self.block_size)
        paths = []
        for u in sorted(outs):
            path = directory / f"{prefix}_user{u}.wav"
            write_wav_float32(path, outs[u], self.config.sample_rate)
            paths.append(path)
        return paths

    def run_to(self, t: int) -> None:
        """Advance the clock to absolute sample ``t`` (no audio collection)."""
        if t < self.clock:
            raise ValueError(f"clock cannot move backwards ({self.clock} -> {t})")
        if t > self.clock:
            self.advance(t - self.clock)
