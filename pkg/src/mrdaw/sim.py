"""Deterministic network-latency simulator for control traces.

Replays a JSONL control trace through a full session host on a virtual
sample clock: upstream gestures are delayed by a latency model, state
snapshots fan back out to per-user clients with their own delays and
optional loss, and everything advances in exact sample steps so results are
reproducible bit-for-bit for a given (trace, model, config) triple. No
wall-clock time enters the report.

Gestures carry sender timestamps. The session/audio timeline is aligned to
those send times — a recording's length and phase come from when the player
acted, not from when the network delivered the packet — so loop content is
invariant under latency and jitter as long as events are processed in send
order. Arrival times gate only *visibility*: when state changes take hold
for broadcasting, and thus how soon client views converge. (If jitter
reorders two events that race closer than the round trip, the later arrival
is clamped onto the session clock; spacing gestures beyond
2*(one_way + jitter) guarantees this never triggers.)

Loss applies to the downstream snapshot datagrams; they are idempotent
full-state messages, so a dropped one is healed by the next periodic
broadcast. Control gestures are assumed delivered (they ride the reliable
path in deployments where that matters) — otherwise runs with loss would not
even agree on the final session state.
"""

from __future__ import annotations

import dataclasses
import hashlib
import heapq
import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .engine import DEFAULT_BLOCK, render_session
from .host import InputFeed, SessionHost, make_synth_feed
from .session import (
    ControlEvent,
    EventKind,
    SessionConfig,
    StopCaptureAndFinalize,
)

logger = logging.getLogger(__name__)

DEFAULT_BROADCAST_INTERVAL_MS = 50.0

#: one-way latency presets, in milliseconds
LATENCY_PRESETS = {
    "local": 0.0,
    "metro": 5.0,
    "1000km-fiber": 10.0,
    "continental": 15.0,
}

TRACE_EVENT_NAMES = {k.value for k in EventKind}


class TraceError(ValueError):
    """A malformed trace file; message names the offending line."""


@dataclass(frozen=True, slots=True)
class LatencyModel:
    """One-way delay with uniform jitter and i.i.d. snapshot loss."""

    one_way_ms: float = 0.0
    jitter_ms: float = 0.0
    loss_pct: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.one_way_ms < 0 or self.jitter_ms < 0:
            raise ValueError("latency cannot be negative")
        if not 0.0 <= self.loss_pct <= 100.0:
            raise ValueError("loss_pct must be in [0, 100]")

    @classmethod
    def preset(cls, name: str, **overrides) -> "LatencyModel":
        if name not in LATENCY_PRESETS:
            raise ValueError(
                f"unknown latency preset {name!r} (have {sorted(LATENCY_PRESETS)})"
            )
        return cls(one_way_ms=LATENCY_PRESETS[name], **overrides)

    def delay_samples(self, rng: random.Random, sample_rate: int) -> int:
        ms = self.one_way_ms
        if self.jitter_ms:
            ms += rng.uniform(-self.jitter_ms, self.jitter_ms)
        return max(0, round(ms * sample_rate / 1000.0))

    def convergence_bound_ms(self, interval_ms: float, snapshot_losses: int = 0) -> float:
        """Worst-case lag from last gesture send to client convergence.

        With no loss this is the familiar round trip plus one broadcast
        interval; each consecutive snapshot lost after the session went
        quiet costs one more periodic rebroadcast.
        """
        return 2.0 * (self.one_way_ms + self.jitter_ms) + (
            1 + snapshot_losses
        ) * interval_ms


@dataclass(frozen=True, slots=True)
class TraceEvent:
    t_ms: float
    user: int
    event: str
    track: Optional[int] = None


_TRACE_KEYS = {"t_ms", "user", "event", "track"}


def parse_trace_line(obj: object, where: str) -> TraceEvent:
    if not isinstance(obj, dict):
        raise TraceError(f"{where}: expected an object, got {type(obj).__name__}")
    unknown = set(obj) - _TRACE_KEYS
    if unknown:
        raise TraceError(f"{where}: unknown keys {sorted(unknown)}")
    t_ms = obj.get("t_ms")
    if not isinstance(t_ms, (int, float)) or isinstance(t_ms, bool) or t_ms < 0:
        raise TraceError(f"{where}: t_ms must be a non-negative number")
    user = obj.get("user")
    if not isinstance(user, int) or isinstance(user, bool) or user < 1:
        raise TraceError(f"{where}: user must be a positive integer")
    event = obj.get("event")
    if event not in TRACE_EVENT_NAMES:
        raise TraceError(
            f"{where}: event must be one of {sorted(TRACE_EVENT_NAMES)}, got {event!r}"
        )
    track = obj.get("track")
    if event == "toggle":
        if not isinstance(track, int) or isinstance(track, bool) or track < 0:
            raise TraceError(f"{where}: toggle events need a non-negative track")
    elif track is not None:
        raise TraceError(f"{where}: only toggle events carry a track")
    return TraceEvent(float(t_ms), user, event, track)


def load_trace(path: str | Path) -> list[TraceEvent]:
    """Read a JSONL control trace; events must be time-ordered."""
    events: list[TraceEvent] = []
    last = -math.inf
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise TraceError(f"{where}: invalid JSON ({e.msg})") from None
            te = parse_trace_line(obj, where)
            if te.t_ms < last:
                raise TraceError(f"{where}: events must be in time order")
            last = te.t_ms
            events.append(te)
    return events


@dataclass
class SimReport:
    """Everything a run produced, JSON-serializable except the host."""

    config: dict
    model: dict
    broadcast_interval_ms: float
    trace_events: int
    last_event_ms: float
    quiescence_ms: float
    truncated: bool
    final: dict
    final_playhead: int
    loop_len: int
    audio_hash: str
    audio_peak: float
    clients: dict
    state_log: list
    events_applied: list
    loops_finalized: list
    violations: list
    host: SessionHost = field(repr=False, compare=False, default=None)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("host")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


class _Client:
    __slots__ = ("user", "view", "last_seq", "last_change", "delivered", "lost", "sends")

    def __init__(self, user: int) -> None:
        self.user = user
        self.view: Optional[dict] = None
        self.last_seq = -1
        self.last_change: Optional[int] = None
        self.delivered = 0
        self.lost = 0
        self.sends: list[tuple[int, bool]] = []  # (send sample, delivered?)


def simulate(
    trace: list[TraceEvent],
    model: LatencyModel = LatencyModel(),
    config: Optional[SessionConfig] = None,
    *,
    broadcast_interval_ms: float = DEFAULT_BROADCAST_INTERVAL_MS,
    horizon_ms: Optional[float] = None,
    block_size: int = DEFAULT_BLOCK,
    input_feed: Optional[InputFeed] = None,
) -> SimReport:
    """Run one virtual-time session replay and return its report."""
    config = config or SessionConfig()
    sr = config.sample_rate
    host = SessionHost(
        config,
        input_feed=input_feed or make_synth_feed(sr),
        block_size=block_size,
    )
    rng = random.Random(model.seed)

    def to_samples(ms: float) -> int:
        return round(ms * sr / 1000.0)

    def to_ms(samples: int) -> float:
        return samples * 1000.0 / sr

    interval = max(1, to_samples(broadcast_interval_ms))
    # upstream delays drawn in trace order, before any downstream draws,
    # so arrival jitter cannot perturb the draw sequence
    arrivals = sorted(
        (to_samples(te.t_ms) + model.delay_samples(rng, sr), idx, to_samples(te.t_ms), te)
        for idx, te in enumerate(trace)
    )
    last_event_send = to_samples(trace[-1].t_ms) if trace else 0
    if horizon_ms is None:
        horizon = to_samples((trace[-1].t_ms if trace else 0.0) + 10_000.0)
    else:
        horizon = to_samples(horizon_ms)

    clients = {u: _Client(u) for u in config.users()}
    deliveries: list[tuple[int, int, int, dict]] = []  # (t, seq, user, payload)
    seq = 0
    next_periodic = 0
    state_log: list[tuple[int, dict]] = [(0, host.payload())]
    events_applied: list[dict] = []
    loops_finalized: list[dict] = []
    truncated = False

    def send_snapshot(now: int) -> None:
        nonlocal seq, next_periodic
        seq += 1
        payload = host.payload()
        if payload != state_log[-1][1]:
            state_log.append((now, payload))
        for u in sorted(clients):
            c = clients[u]
            lost = model.loss_pct > 0 and rng.random() * 100.0 < model.loss_pct
            c.sends.append((now, not lost))
            if lost:
                c.lost += 1
            else:
                c.delivered += 1
                heapq.heappush(
                    deliveries,
                    (now + model.delay_samples(rng, sr), seq, u, payload),
                )
        next_periodic = now + interval
        host.dirty = False

    ai = 0
    while True:
        current = host.payload()
        # Quiescent once every client sees the live payload and nothing in
        # flight can change that: a pending snapshot is harmless if it carries
        # the same payload, or if the client's sequence filter will drop it.
        # (When the one-way delay meets or exceeds the broadcast interval the
        # delivery queue never empties, so "queue drained" is not a usable
        # termination test.)
        settled = (
            ai >= len(arrivals)
            and all(c.view == current for c in clients.values())
            and all(
                payload == current or dseq <= clients[user].last_seq
                for _, dseq, user, payload in deliveries
            )
        )
        if settled:
            break
        candidates = [next_periodic]
        if ai < len(arrivals):
            candidates.append(arrivals[ai][0])
        if deliveries:
            candidates.append(deliveries[0][0])
        now = min(candidates)
        if now > horizon:
            truncated = True
            break
        while ai < len(arrivals) and arrivals[ai][0] == now:
            _, _, send_t, te = arrivals[ai]
            ai += 1
            # the session clock follows the sender's timeline; a late packet
            # that lost a race is clamped forward onto it
            session_t = max(send_t, host.clock)
            host.run_to(session_t)
            effects = host.apply(
                ControlEvent(session_t, te.user, EventKind(te.event), te.track)
            )
            events_applied.append(
                {
                    "t_ms": to_ms(session_t),
                    "arrival_ms": to_ms(now),
                    "user": te.user,
                    "event": te.event,
                    "track": te.track,
                }
            )
            for eff in effects:
                if isinstance(eff, StopCaptureAndFinalize):
                    loops_finalized.append(
                        {
                            "t_ms": to_ms(session_t),
                            "track": eff.track,
                            "length": host.state.master_len,
                        }
                    )
        if host.dirty or now >= next_periodic:
            send_snapshot(now)
        while deliveries and deliveries[0][0] == now:
            _, dseq, user, payload = heapq.heappop(deliveries)
            c = clients[user]
            if dseq > c.last_seq:
                c.last_seq = dseq
                if payload != c.view:
                    c.view = payload
                    c.last_change = now

    final_payload = host.payload()
    quiescence = state_log[-1][0]
    loop_len = host.state.master_len or 0
    aligned = dataclasses.replace(host.state, playhead=0)
    rendered = render_session(aligned, host.loops, loop_len, block_size)
    digest = hashlib.sha256()
    peak = 0.0
    for u in sorted(rendered):
        data = rendered[u].astype("<f4")
        digest.update(data.tobytes())
        if len(data):
            peak = max(peak, float(np.max(np.abs(data))))

    clients_out: dict[str, dict] = {}
    for u in sorted(clients):
        c = clients[u]
        converged = c.view == final_payload and not truncated
        lag = None
        if converged:
            changed_at = c.last_change if c.last_change is not None else 0
            lag = max(0.0, to_ms(changed_at) - to_ms(last_event_send))
        post_q = 0
        for send_t, ok in c.sends:
            if send_t < quiescence:
                continue
            if ok:
                break
            post_q += 1
        clients_out[str(u)] = {
            "convergence_ms": lag,
            "delivered": c.delivered,
            "lost": c.lost,
            "post_quiescence_losses": post_q,
            "bound_ms": model.convergence_bound_ms(broadcast_interval_ms, post_q),
        }

    report = SimReport(
        config={
            "num_users": config.num_users,
            "tracks_per_user": config.tracks_per_user,
            "sample_rate": sr,
            "talk_gain": config.talk_gain,
            "track_gains": list(config.track_gains),
            "block_size": block_size,
        },
        model={
            "one_way_ms": model.one_way_ms,
            "jitter_ms": model.jitter_ms,
            "loss_pct": model.loss_pct,
            "seed": model.seed,
        },
        broadcast_interval_ms=broadcast_interval_ms,
        trace_events=len(trace),
        last_event_ms=to_ms(last_event_send),
        quiescence_ms=to_ms(quiescence),
        truncated=truncated,
        final=final_payload,
        final_playhead=host.state.playhead,
        loop_len=loop_len,
        audio_hash=digest.hexdigest(),
        audio_peak=peak,
        clients=clients_out,
        state_log=[[to_ms(t), payload] for t, payload in state_log],
        events_applied=events_applied,
        loops_finalized=loops_finalized,
        violations=[],
        host=host,
    )
    report.violations = check_invariants(report.to_dict())
    return report


# --- invariant audit --------------------------------------------------------

_TRACK_LABELS = {"empty", "recording", "playing", "muted"}


def check_invariants(report: dict) -> list[str]:
    """Audit a report dict against the session laws; returns violations.

    Works on the serialized form so saved reports (or deliberately corrupted
    fixtures) can be audited the same way as fresh runs.
    """
    v: list[str] = []
    cfg = report["config"]
    users = range(1, cfg["num_users"] + 1)
    tpu = cfg["tracks_per_user"]
    total = cfg["num_users"] * tpu

    def audit_payload(t_ms: float, payload: dict) -> None:
        if payload.get("transport") not in ("playing", "stopped"):
            v.append(f"transport-label: bad transport at t={t_ms}")
        tracks = payload.get("tracks", [])
        if len(tracks) != total:
            v.append(f"track-count: {len(tracks)} tracks at t={t_ms}")
            return
        for u in users:
            alloc = range((u - 1) * tpu, u * tpu)
            recording = [
                tr["index"]
                for tr in tracks
                if tr["index"] in alloc and tr.get("state") == "recording"
            ]
            if len(recording) > 1:
                v.append(
                    f"single-recording-per-user: user {u} records on "
                    f"{recording} at t={t_ms}"
                )
            cur = payload.get("cursors", {}).get(str(u))
            if cur not in alloc:
                v.append(f"cursor-ownership: user {u} cursor {cur} at t={t_ms}")
        for tr in tracks:
            if tr.get("state") not in _TRACK_LABELS:
                v.append(
                    f"track-label: track {tr.get('index')} state "
                    f"{tr.get('state')!r} at t={t_ms}"
                )

    last_t = -1.0
    master = 0
    for t_ms, payload in report["state_log"]:
        if t_ms < last_t:
            v.append(f"snapshot-order: t={t_ms} after t={last_t}")
        last_t = t_ms
        audit_payload(t_ms, payload)
        ll = payload.get("looplen", 0)
        if master and ll != master:
            v.append(f"master-len-immutable: {master} -> {ll} at t={t_ms}")
        if ll:
            master = ll

    if report["state_log"] and report["final"] != report["state_log"][-1][1]:
        v.append("final-snapshot: final state differs from last logged snapshot")

    for entry in report["loops_finalized"]:
        if entry["length"] != report["loop_len"]:
            v.append(
                f"loop-length-matches-master: track {entry['track']} finalized "
                f"at {entry['length']} != {report['loop_len']}"
            )

    if report["loop_len"]:
        if not 0 <= report["final_playhead"] < report["loop_len"]:
            v.append(f"playhead-range: {report['final_playhead']}")
    elif report["final_playhead"] != 0:
        v.append("playhead-range: nonzero playhead without master length")

    if report["audio_peak"] > 1.0 + 1e-9:
        v.append(f"mix-clamp-range: peak {report['audio_peak']}")

    for uid, c in report["clients"].items():
        if c["convergence_ms"] is None:
            v.append(f"client-convergence: user {uid} never converged")
        elif c["convergence_ms"] > c["bound_ms"] + 1e-9:
            v.append(
                f"convergence-bound: user {uid} lag {c['convergence_ms']:.3f} ms "
                f"exceeds bound {c['bound_ms']:.3f} ms"
            )
    return v
