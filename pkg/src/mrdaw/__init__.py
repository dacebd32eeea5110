"""Headless collaborative loop-session engine.

Two (or more) players share a bank of loop tracks over the network. Each
player drives the session with three pedal gestures (record, play, stop) and
per-track toggles; the first finalized recording pins the master loop length
and every later take is trimmed or zero-extended to match it, phase-aligned
to the shared downbeat. A deterministic core state machine feeds a DAW
backend (an in-process loop engine, or OSC out to a real DAW), a UDP/OSC +
WebSocket server fans state snapshots out to thin clients, and a virtual-time
simulator replays control traces under configurable network latency models.
"""

from .session import (
    SessionConfig,
    SessionState,
    TrackState,
    TrackVariant,
    Transport,
    ControlEvent,
    EventKind,
    apply_event,
    advance_cursor,
    selected_tracks,
    reset_session,
)

__version__ = "0.1.0"

__all__ = [
    "SessionConfig",
    "SessionState",
    "TrackState",
    "TrackVariant",
    "Transport",
    "ControlEvent",
    "EventKind",
    "apply_event",
    "advance_cursor",
    "selected_tracks",
    "reset_session",
    "__version__",
]
