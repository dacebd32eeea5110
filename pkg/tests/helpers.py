"""Shared test utilities: random event traces, states with content, oracles."""

from __future__ import annotations

import random
from typing import Optional

import numpy as np

from mrdaw.engine import LoopBuffer
from mrdaw.session import (
    ControlEvent,
    EventKind,
    SessionConfig,
    SessionState,
    TrackState,
    TrackVariant,
    Transport,
)

KINDS = (
    EventKind.RECORD_TOGGLE,
    EventKind.PLAY_ALL,
    EventKind.STOP_ALL,
    EventKind.TRACK_TOGGLE,
)


def random_events(
    rng: random.Random,
    config: SessionConfig,
    n: int,
    *,
    max_gap: int = 4000,
    record_bias: float = 0.5,
    include_invalid: bool = False,
) -> list[ControlEvent]:
    """A random, time-ordered control trace.

    ``record_bias`` skews the kind distribution toward record toggles so that
    traces actually mint loops instead of idling on transport events.
    """
    events: list[ControlEvent] = []
    t = 0
    for _ in range(n):
        t += rng.randrange(1, max_gap)
        if include_invalid and rng.random() < 0.1:
            events.append(
                ControlEvent(t, config.num_users + 1 + rng.randrange(3), EventKind.PLAY_ALL)
            )
            continue
        user = rng.randrange(config.num_users) + 1
        if rng.random() < record_bias:
            kind = EventKind.RECORD_TOGGLE
        else:
            kind = rng.choice(KINDS)
        track: Optional[int] = None
        if kind is EventKind.TRACK_TOGGLE:
            if include_invalid and rng.random() < 0.1:
                track = config.total_tracks + rng.randrange(4)
            else:
                track = rng.randrange(config.total_tracks)
        events.append(ControlEvent(t, user, kind, track))
    return events


def make_loaded_state(
    rng: random.Random,
    config: SessionConfig,
    *,
    master_len: int,
    amp: float = 0.4,
    playing: bool = True,
) -> tuple[SessionState, dict[int, LoopBuffer]]:
    """A session state with random loop content, built directly (no events).

    Each track is independently Empty, Playing or Muted; loop samples are
    uniform in [-amp, amp] so sums of a few tracks stay clamp-free unless the
    caller wants otherwise.
    """
    store: dict[int, LoopBuffer] = {}
    tracks: list[TrackState] = []
    ref = 0
    for _ in range(config.total_tracks):
        roll = rng.random()
        if roll < 0.45:
            tracks.append(TrackState())
            continue
        data = np.array([rng.uniform(-amp, amp) for _ in range(master_len)])
        store[ref] = LoopBuffer(samples=data)
        variant = TrackVariant.PLAYING if roll < 0.85 else TrackVariant.MUTED
        tracks.append(TrackState(variant, content_ref=ref))
        ref += 1
    state = SessionState(
        config=config,
        transport=Transport.PLAYING if playing else Transport.STOPPED,
        master_len=master_len,
        playhead=rng.randrange(master_len),
        tracks=tuple(tracks),
        cursors=tuple(config.tracks_of(u)[0] for u in config.users()),
        epoch=0,
        loop_seq=ref,
    )
    return state, store
