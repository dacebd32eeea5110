"""Session state machine: pure, deterministic, and side-effect free.

All mutation goes through :func:`apply_event`, which maps (state, control
event) to (new state, effect commands). Effects describe what the audio/DAW
layer should do (start a capture, enable a clip, start transport, ...) but
nothing here performs I/O, so the whole protocol can be replayed and property
tested without an audio stack.

Timestamps are sample indices on the server's audio clock. The master loop
length is set once, by the first finalized recording, and never changes until
session reset; later recordings are trimmed or zero-extended to it by the
loop engine, phase-aligned via the epoch recorded here.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

logger = logging.getLogger(__name__)


class Transport(str, Enum):
    STOPPED = "stopped"
    PLAYING = "playing"


class TrackVariant(str, Enum):
    EMPTY = "empty"
    RECORDING = "recording"
    PLAYING = "playing"
    MUTED = "muted"


class EventKind(str, Enum):
    RECORD_TOGGLE = "record"
    PLAY_ALL = "play"
    STOP_ALL = "stop"
    TRACK_TOGGLE = "toggle"


@dataclass(frozen=True, slots=True)
class SessionConfig:
    """Static session parameters, fixed at session creation."""

    num_users: int = 2
    tracks_per_user: int = 4
    sample_rate: int = 48000
    talk_gain: float = 1.0
    track_gains: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.num_users < 1:
            raise ValueError("num_users must be >= 1")
        if self.tracks_per_user < 1:
            raise ValueError("tracks_per_user must be >= 1")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not 0.0 <= self.talk_gain <= 1.0:
            raise ValueError("talk_gain must be in [0, 1]")
        if not self.track_gains:
            object.__setattr__(
                self, "track_gains", (1.0,) * (self.num_users * self.tracks_per_user)
            )
        if len(self.track_gains) != self.num_users * self.tracks_per_user:
            raise ValueError("track_gains must have one entry per track")
        if any(not 0.0 <= g <= 1.0 for g in self.track_gains):
            raise ValueError("track gains must be in [0, 1]")

    @property
    def total_tracks(self) -> int:
        return self.num_users * self.tracks_per_user

    def users(self) -> range:
        """User ids, 1-based."""
        return range(1, self.num_users + 1)

    def owner_of(self, track: int) -> int:
        if not 0 <= track < self.total_tracks:
            raise IndexError(f"track {track} out of range")
        return track // self.tracks_per_user + 1

    def tracks_of(self, user: int) -> range:
        """Absolute track indices allocated to ``user``."""
        if user not in self.users():
            raise ValueError(f"unknown user {user}")
        base = (user - 1) * self.tracks_per_user
        return range(base, base + self.tracks_per_user)


@dataclass(frozen=True, slots=True)
class TrackState:
    """One loop slot.

    ``content_ref`` is an opaque handle into the loop store, present exactly
    when the slot holds finalized audio (Playing or Muted). ``started_at`` is
    the capture start sample, present exactly while Recording.
    """

    variant: TrackVariant = TrackVariant.EMPTY
    started_at: Optional[int] = None
    content_ref: Optional[int] = None

    def __post_init__(self) -> None:
        has_content = self.variant in (TrackVariant.PLAYING, TrackVariant.MUTED)
        if has_content != (self.content_ref is not None):
            raise ValueError(f"{self.variant.value} track content_ref mismatch")
        if (self.variant is TrackVariant.RECORDING) != (self.started_at is not None):
            raise ValueError(f"{self.variant.value} track started_at mismatch")


EMPTY_TRACK = TrackState()


@dataclass(frozen=True, slots=True)
class ControlEvent:
    """A user gesture, timestamped in samples by the receiving clock."""

    t: int
    user: int
    kind: EventKind
    track: Optional[int] = None


# --- effect commands -------------------------------------------------------
#
# Emitted by apply_event for the DAW/audio layer. Dataclasses rather than an
# enum so each carries its arguments; Broadcast and Diagnostic are informational
# and never reach a backend.


@dataclass(frozen=True, slots=True)
class StartCapture:
    user: int
    track: int


@dataclass(frozen=True, slots=True)
class StopCaptureAndFinalize:
    user: int
    track: int


@dataclass(frozen=True, slots=True)
class TransportStart:
    pass


@dataclass(frozen=True, slots=True)
class TransportStop:
    pass


@dataclass(frozen=True, slots=True)
class TrackEnable:
    track: int


@dataclass(frozen=True, slots=True)
class TrackDisable:
    track: int


@dataclass(frozen=True, slots=True)
class Broadcast:
    """Session state changed; push a fresh snapshot to all clients."""

    state: "SessionState"


@dataclass(frozen=True, slots=True)
class Diagnostic:
    """A rejected or degenerate event; state unchanged apart from its report."""

    message: str


Effect = Union[
    StartCapture,
    StopCaptureAndFinalize,
    TransportStart,
    TransportStop,
    TrackEnable,
    TrackDisable,
    Broadcast,
    Diagnostic,
]


@dataclass(frozen=True, slots=True)
class SessionState:
    """Complete shared session state.

    ``epoch`` is the sample index of the loop grid origin (the downbeat);
    while the transport runs, the playhead is (now - epoch) mod master_len.
    ``loop_seq`` mints content_ref handles for finalized loops.
    """

    config: SessionConfig
    transport: Transport
    master_len: Optional[int]
    playhead: int
    tracks: tuple[TrackState, ...]
    cursors: tuple[int, ...]
    epoch: int = 0
    loop_seq: int = 0

    @classmethod
    def fresh(cls, config: SessionConfig) -> "SessionState":
        return cls(
            config=config,
            transport=Transport.STOPPED,
            master_len=None,
            playhead=0,
            tracks=(EMPTY_TRACK,) * config.total_tracks,
            cursors=tuple(config.tracks_of(u)[0] for u in config.users()),
        )

    def cursor_of(self, user: int) -> int:
        return self.cursors[user - 1]

    def recording_track_of(self, user: int) -> Optional[int]:
        for i in self.config.tracks_of(user):
            if self.tracks[i].variant is TrackVariant.RECORDING:
                return i
        return None

    def check(self) -> None:
        """Assert structural invariants; used by tests and debug paths."""
        cfg = self.config
        assert len(self.tracks) == cfg.total_tracks
        assert len(self.cursors) == cfg.num_users
        for u in cfg.users():
            recording = [
                i
                for i in cfg.tracks_of(u)
                if self.tracks[i].variant is TrackVariant.RECORDING
            ]
            assert len(recording) <= 1, f"user {u} has {len(recording)} recording tracks"
            assert self.cursor_of(u) in cfg.tracks_of(u), f"user {u} cursor escaped"
        if self.master_len is not None:
            assert self.master_len > 0
            assert 0 <= self.playhead < self.master_len
        else:
            assert self.playhead == 0
        for tr in self.tracks:
            tr.__post_init__()  # re-validate variant/field coherence


def _replace_track(state: SessionState, index: int, track: TrackState) -> SessionState:
    tracks = list(state.tracks)
    tracks[index] = track
    return dataclasses.replace(state, tracks=tuple(tracks))


def advance_cursor(state: SessionState, user: int) -> SessionState:
    """Move ``user``'s cursor to the next empty slot in their allocation.

    Scans forward from the slot after the cursor, wrapping; if the user has no
    empty slot left, the cursor parks on their first allocated track.
    """
    alloc = list(state.config.tracks_of(user))
    pos = alloc.index(state.cursor_of(user))
    for step in range(1, len(alloc) + 1):
        candidate = alloc[(pos + step) % len(alloc)]
        if state.tracks[candidate].variant is TrackVariant.EMPTY:
            break
    else:
        candidate = alloc[0]
    cursors = list(state.cursors)
    cursors[user - 1] = candidate
    return dataclasses.replace(state, cursors=tuple(cursors))


def selected_tracks(state: SessionState) -> dict[int, Optional[int]]:
    """Per-user selected slot: the cursor track while it is still empty."""
    out: dict[int, Optional[int]] = {}
    for u in state.config.users():
        cur = state.cursor_of(u)
        out[u] = cur if state.tracks[cur].variant is TrackVariant.EMPTY else None
    return out


def reset_session(state: SessionState) -> SessionState:
    """Drop all content and timing; keep the config."""
    return SessionState.fresh(state.config)


def _start_recording(
    state: SessionState, ev: ControlEvent
) -> tuple[SessionState, list[Effect]]:
    effects: list[Effect] = []
    if state.transport is Transport.STOPPED:
        state = dataclasses.replace(
            state, transport=Transport.PLAYING, playhead=0, epoch=ev.t
        )
        effects.append(TransportStart())
    target = state.cursor_of(ev.user)
    prior = state.tracks[target]
    if prior.variant is not TrackVariant.EMPTY:
        logger.info("user %d re-records track %d, discarding prior take", ev.user, target)
    state = _replace_track(
        state, target, TrackState(TrackVariant.RECORDING, started_at=ev.t)
    )
    effects.append(StartCapture(ev.user, target))
    effects.append(Broadcast(state))
    return state, effects


def _stop_recording(
    state: SessionState, ev: ControlEvent, track: int
) -> tuple[SessionState, list[Effect]]:
    started_at = state.tracks[track].started_at
    assert started_at is not None
    length = ev.t - started_at
    if length <= 0:
        # Same-sample press/release: nothing was captured, so there is no loop
        # to finalize (a zero-length master loop would be indistinguishable
        # from "unset"). Give the slot back.
        state = _replace_track(state, track, EMPTY_TRACK)
        return state, [
            Diagnostic(f"discarded zero-length take on track {track}"),
            Broadcast(state),
        ]
    if state.master_len is None:
        # First finalized loop pins the master length and the loop grid
        # origin: the downbeat is where this capture began.
        state = dataclasses.replace(
            state, master_len=length, epoch=started_at, playhead=0
        )
    state = _replace_track(
        state,
        track,
        TrackState(TrackVariant.PLAYING, content_ref=state.loop_seq),
    )
    state = dataclasses.replace(state, loop_seq=state.loop_seq + 1)
    state = advance_cursor(state, ev.user)
    return state, [
        StopCaptureAndFinalize(ev.user, track),
        TrackEnable(track),
        Broadcast(state),
    ]


def apply_event(
    state: SessionState, ev: ControlEvent
) -> tuple[SessionState, list[Effect]]:
    """Apply one control event; returns the new state and ordered effects.

    Rejected events (unknown user, out-of-range track) leave the state
    untouched and yield a single Diagnostic effect. No-op toggles yield no
    effects at all.
    """
    if ev.user not in state.config.users():
        return state, [Diagnostic(f"unknown user {ev.user}")]

    if ev.kind is EventKind.RECORD_TOGGLE:
        open_track = state.recording_track_of(ev.user)
        if open_track is None:
            return _start_recording(state, ev)
        return _stop_recording(state, ev, open_track)

    if ev.kind is EventKind.PLAY_ALL:
        state = dataclasses.replace(
            state, transport=Transport.PLAYING, playhead=0, epoch=ev.t
        )
        return state, [TransportStart(), Broadcast(state)]

    if ev.kind is EventKind.STOP_ALL:
        state = dataclasses.replace(state, transport=Transport.STOPPED)
        return state, [TransportStop(), Broadcast(state)]

    if ev.kind is EventKind.TRACK_TOGGLE:
        if ev.track is None or not 0 <= ev.track < state.config.total_tracks:
            return state, [Diagnostic(f"track {ev.track} out of range")]
        tr = state.tracks[ev.track]
        if tr.variant is TrackVariant.PLAYING:
            state = _replace_track(
                state,
                ev.track,
                TrackState(TrackVariant.MUTED, content_ref=tr.content_ref),
            )
            return state, [TrackDisable(ev.track), Broadcast(state)]
        if tr.variant is TrackVariant.MUTED:
            state = _replace_track(
                state,
                ev.track,
                TrackState(TrackVariant.PLAYING, content_ref=tr.content_ref),
            )
            return state, [TrackEnable(ev.track), Broadcast(state)]
        # Empty or Recording: toggling has nothing to do.
        return state, []

    raise AssertionError(f"unhandled event kind {ev.kind}")  # pragma: no cover
