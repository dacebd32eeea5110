"""DAW backend abstraction: effect dispatch and the two shipped backends.

The session core emits effect commands; :func:`dispatch` lowers them onto the
narrow backend contract (track-indexed clip gestures plus transport). The
mock backend is a self-contained in-process looper that reconstructs loop
content, master length and playhead purely from the contract calls and its
own sample clock — it deliberately shares no bookkeeping with the session state
machine, so end-to-end audio equality between the two is a meaningful check.
The OSC-out backend forwards the same calls as clip/transport messages for an
external DAW bridge.
"""

from __future__ import annotations

import logging
from typing import Callable, Optional

import numpy as np

from .engine import (
    DEFAULT_BLOCK,
    CaptureBuffer,
    LoopBuffer,
    capture_append,
    finalize_loop,
    render_session,
)
from .osc import OscMessage
from .session import (
    Broadcast,
    Diagnostic,
    Effect,
    SessionConfig,
    SessionState,
    StartCapture,
    StopCaptureAndFinalize,
    TrackDisable,
    TrackEnable,
    TrackState,
    TrackVariant,
    Transport,
    TransportStart,
    TransportStop,
)

logger = logging.getLogger(__name__)

BackendCall = tuple[str, tuple]


class DawBackend:
    """Contract every backend implements; calls are fire-and-forget."""

    #: whether advance() should hand this backend the live input blocks
    wants_audio = False

    def start_capture(self, track: int) -> None:
        raise NotImplementedError

    def stop_capture(self, track: int) -> None:
        raise NotImplementedError

    def enable(self, track: int) -> None:
        raise NotImplementedError

    def disable(self, track: int) -> None:
        raise NotImplementedError

    def transport_start(self) -> None:
        raise NotImplementedError

    def transport_stop(self) -> None:
        raise NotImplementedError

    def tick(self, live: Optional[dict[int, np.ndarray]], n: int) -> None:
        """Advance the backend's sample clock; no-op unless it hosts audio."""


class NullBackend(DawBackend):
    """Discards every call; for headless replay where audio lives elsewhere."""

    def start_capture(self, track: int) -> None:
        pass

    def stop_capture(self, track: int) -> None:
        pass

    def enable(self, track: int) -> None:
        pass

    def disable(self, track: int) -> None:
        pass

    def transport_start(self) -> None:
        pass

    def transport_stop(self) -> None:
        pass


def dispatch(effects: list[Effect], backend: DawBackend) -> list[BackendCall]:
    """Lower effect commands onto backend calls, in order.

    Broadcast and Diagnostic effects are informational and skipped. A failing
    backend call is logged and does not stop the rest of the batch — the
    session state has already moved on and must not be rolled back.
    """
    calls: list[BackendCall] = []
    for eff in effects:
        if isinstance(eff, StartCapture):
            call: BackendCall = ("start_capture", (eff.track,))
        elif isinstance(eff, StopCaptureAndFinalize):
            call = ("stop_capture", (eff.track,))
        elif isinstance(eff, TrackEnable):
            call = ("enable", (eff.track,))
        elif isinstance(eff, TrackDisable):
            call = ("disable", (eff.track,))
        elif isinstance(eff, TransportStart):
            call = ("transport_start", ())
        elif isinstance(eff, TransportStop):
            call = ("transport_stop", ())
        elif isinstance(eff, (Broadcast, Diagnostic)):
            continue
        else:  # pragma: no cover - exhaustive over Effect
            raise TypeError(f"unknown effect {eff!r}")
        calls.append(call)
        try:
            getattr(backend, call[0])(*call[1])
        except Exception:
            logger.exception("backend call %s%r failed; continuing", call[0], call[1])
    return calls


_OSC_OUT_MAP = {
    "start_capture": "/live/clip_slot/fire",
    "stop_capture": "/live/clip_slot/fire",
    "enable": "/live/clip/fire",
    "disable": "/live/clip/stop",
}


def osc_out_translate(call: BackendCall) -> OscMessage:
    """Map a backend call to its outbound OSC message (scene index 0)."""
    name, args = call
    if name in _OSC_OUT_MAP:
        return OscMessage(_OSC_OUT_MAP[name], (args[0], 0))
    if name == "transport_start":
        return OscMessage("/live/song/start_playing")
    if name == "transport_stop":
        return OscMessage("/live/song/stop_playing")
    raise ValueError(f"untranslatable backend call {name!r}")


class OscOutBackend(DawBackend):
    """Forwards contract calls as OSC messages through an injected sender."""

    def __init__(self, sender: Callable[[OscMessage], None]) -> None:
        self._send = sender

    def _emit(self, name: str, *args: int) -> None:
        self._send(osc_out_translate((name, args)))

    def start_capture(self, track: int) -> None:
        self._emit("start_capture", track)

    def stop_capture(self, track: int) -> None:
        self._emit("stop_capture", track)

    def enable(self, track: int) -> None:
        self._emit("enable", track)

    def disable(self, track: int) -> None:
        self._emit("disable", track)

    def transport_start(self) -> None:
        self._emit("transport_start")

    def transport_stop(self) -> None:
        self._emit("transport_stop")


class MockDawBackend(DawBackend):
    """In-process looper driven only by contract calls and the sample clock.

    Keeps loops keyed by track, infers the master length from the first
    completed capture and the loop-grid origin from transport starts, exactly
    as a real clip-slot DAW would experience the session.
    """

    wants_audio = True

    def __init__(self, config: SessionConfig) -> None:
        self.config = config
        self.clock = 0
        self.running = False
        self.master_len: Optional[int] = None
        self.origin = 0
        self.playhead = 0
        self.loops: dict[int, LoopBuffer] = {}
        self.enabled: set[int] = set()
        self.captures: dict[int, CaptureBuffer] = {}

    def start_capture(self, track: int) -> None:
        # Re-firing a slot discards whatever clip it held.
        self.loops.pop(track, None)
        self.enabled.discard(track)
        self.captures[track] = CaptureBuffer(
            user=self.config.owner_of(track), track=track, started_at=self.clock
        )

    def stop_capture(self, track: int) -> None:
        cap = self.captures.pop(track, None)
        if cap is None or cap.length == 0:
            logger.warning("mock: stop_capture(%d) with nothing captured", track)
            return
        if self.master_len is None:
            loop, length = finalize_loop(cap, None)
            self.master_len = length
            self.origin = cap.started_at
            self.playhead = 0
        else:
            cap.start_phase = (cap.started_at - self.origin) % self.master_len
            loop, _ = finalize_loop(cap, self.master_len)
        self.loops[track] = loop

    def enable(self, track: int) -> None:
        if track not in self.loops:
            logger.warning("mock: enable(%d) without a clip", track)
            return
        self.enabled.add(track)

    def disable(self, track: int) -> None:
        self.enabled.discard(track)

    def transport_start(self) -> None:
        self.running = True
        self.playhead = 0
        self.origin = self.clock

    def transport_stop(self) -> None:
        self.running = False

    def tick(self, live: Optional[dict[int, np.ndarray]], n: int) -> None:
        if self.captures and (self.master_len is None or self.running):
            for track, cap in self.captures.items():
                block = live.get(cap.user) if live else None
                capture_append(cap, block if block is not None else np.zeros(n))
        if self.running and self.master_len is not None:
            self.playhead = (self.playhead + n) % self.master_len
        self.clock += n

    def _as_state(self) -> tuple[SessionState, dict[int, LoopBuffer]]:
        """The mock's audio situation expressed as a session snapshot."""
        cfg = self.config
        sounding = self.enabled if self.master_len is not None else set()
        tracks = tuple(
            TrackState(TrackVariant.PLAYING, content_ref=i)
            if i in sounding
            else TrackState()
            for i in range(cfg.total_tracks)
        )
        state = SessionState(
            config=cfg,
            transport=Transport.PLAYING if self.running else Transport.STOPPED,
            master_len=self.master_len,
            playhead=self.playhead,
            tracks=tracks,
            cursors=tuple(cfg.tracks_of(u)[0] for u in cfg.users()),
        )
        return state, {i: self.loops[i] for i in sounding}

    def render(self, duration: int, block_size: int = DEFAULT_BLOCK) -> dict[int, np.ndarray]:
        state, store = self._as_state()
        return render_session(state, store, duration, block_size)
