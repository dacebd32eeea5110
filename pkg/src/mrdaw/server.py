"""Live session server: OSC control in, OSC + WebSocket state out.

One authoritative :class:`~mrdaw.host.SessionHost` runs on a block-rate tick
loop. Control gestures arrive either as OSC datagrams (foot pedals, hardware
toggles) or as JSON events from browser track panels over a WebSocket; both
funnel into a single queue that the tick loop drains, so every event is
stamped at a block boundary of the sample clock. State fans out as full
snapshots — idempotent by construction, so a dropped datagram costs a client
at most one broadcast interval of staleness, never a desync.

Wire surface:

* UDP ``osc_port``   — upstream ``/mrdaw/<user>/...`` control messages.
* UDP ``osc_broadcast_port`` — downstream ``/mrdaw/state/...`` snapshots to
  every OSC client that said hello (TTL-swept).
* ``ws://host:ws_port/panel`` — hello, then events up / snapshots down.
* ``POST /export`` — render the current loops to WAV files on disk.
* ``GET /``         — the track panel bundle, when one is installed.
"""

from __future__ import annotations

import asyncio
import logging
import time
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .backend import DawBackend, MockDawBackend, OscOutBackend
from .host import InputFeed, SessionHost, make_synth_feed, make_wav_feed
from .osc import (
    ControlIntent,
    Hello,
    OscDecodeError,
    debug_message,
    decode,
    encode,
    parse_control,
    snapshot_messages,
)
from .session import ControlEvent, EventKind, SessionConfig
from .wavefile import read_wav_float32

logger = logging.getLogger(__name__)

Address = tuple[str, int]
UdpSend = Callable[[bytes, Address], None]


@dataclass(frozen=True)
class ServerConfig:
    session: SessionConfig = SessionConfig()
    host: str = "127.0.0.1"
    osc_port: int = 9000
    osc_broadcast_port: int = 9001
    ws_port: int = 9002
    backend: str = "mock"
    osc_out_host: str = "127.0.0.1"
    osc_out_port: int = 11000
    block_size: int = 256
    broadcast_interval_ms: float = 50.0
    export_dir: str = "exports"
    inputs: dict[int, str] = field(default_factory=dict)
    static_dir: Optional[str] = None
    client_ttl_s: float = 10.0

    def __post_init__(self) -> None:
        if self.backend not in ("mock", "osc-out"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.block_size <= 0:
            raise ValueError("block_size must be positive")
        if self.broadcast_interval_ms <= 0:
            raise ValueError("broadcast_interval_ms must be positive")
        block_ms = self.block_size * 1000.0 / self.session.sample_rate
        if block_ms > self.broadcast_interval_ms:
            # Event stamping is quantized to block boundaries; the broadcast
            # interval is what absorbs that error, so it must dominate.
            raise ValueError(
                f"block of {block_ms:.1f} ms exceeds the "
                f"{self.broadcast_interval_ms:.1f} ms broadcast interval"
            )
        if self.client_ttl_s <= 0:
            raise ValueError("client_ttl_s must be positive")
        for user in self.inputs:
            if not 1 <= user <= self.session.num_users:
                raise ValueError(f"--input user {user} not in this session")


def parse_panel_event(data: object) -> ControlIntent:
    """Validate one WebSocket event message into a control intent."""
    if not isinstance(data, dict) or data.get("type") != "event":
        raise ValueError("expected an event message")
    user = data.get("user")
    if not isinstance(user, int):
        raise ValueError("event needs an integer user")
    try:
        kind = EventKind(data.get("event"))
    except ValueError:
        raise ValueError(f"unknown event {data.get('event')!r}") from None
    track = data.get("track")
    if kind is EventKind.TRACK_TOGGLE:
        if not isinstance(track, int):
            raise ValueError("toggle needs an integer track")
    elif track is not None:
        raise ValueError(f"{kind.value} does not take a track")
    return ControlIntent(user=user, kind=kind, track=track)


class SessionServer:
    """Protocol-independent core: queues, registry, tick and fan-out.

    All methods are synchronous and take no locks — the event loop calls
    them from one thread. The UDP sender and wall clock are injected so
    tests can drive the server without sockets or sleeps.
    """

    def __init__(
        self,
        config: ServerConfig,
        udp_send: Optional[UdpSend] = None,
        wall_clock: Callable[[], float] = time.monotonic,
    ) -> None:
        self.config = config
        self._udp_send: UdpSend = udp_send or (lambda data, addr: None)
        self._wall = wall_clock
        self.host = SessionHost(
            config.session,
            backend=self._make_backend(),
            input_feed=self._make_feed(),
            block_size=config.block_size,
        )
        self.queue: deque[ControlIntent] = deque()
        # one registration per (user, kind): a newer hello replaces the older
        self.osc_clients: dict[int, tuple[str, float]] = {}
        self.panels: dict[int, tuple[int, asyncio.Queue]] = {}
        self._next_ws_id = 1
        self.seq = 0
        sr = config.session.sample_rate
        self._interval = max(1, round(config.broadcast_interval_ms * sr / 1000.0))
        self._next_broadcast = 0
        self.stats: Counter = Counter()

    # -- construction helpers ------------------------------------------------

    def _make_backend(self) -> DawBackend:
        if self.config.backend == "osc-out":
            target = (self.config.osc_out_host, self.config.osc_out_port)
            return OscOutBackend(lambda msg: self._udp_send(encode(msg), target))
        return MockDawBackend(self.config.session)

    def _make_feed(self) -> InputFeed:
        sr = self.config.session.sample_rate
        synth = make_synth_feed(sr)
        if not self.config.inputs:
            return synth
        sources = {}
        for user, path in self.config.inputs.items():
            samples, rate = read_wav_float32(path)
            if rate != sr:
                raise ValueError(
                    f"{path}: sample rate {rate} != session rate {sr}"
                )
            sources[user] = samples
        wav = make_wav_feed(sources)

        def feed(user: int, start: int, n: int):
            if user in sources:
                return wav(user, start, n)
            return synth(user, start, n)

        return feed

    # -- upstream ------------------------------------------------------------

    def handle_datagram(self, data: bytes, addr: Address) -> None:
        try:
            msg = decode(data)
        except OscDecodeError as e:
            logger.warning("malformed datagram from %s: %s", addr[0], e)
            self.stats["malformed"] += 1
            return
        parsed = parse_control(msg)
        if isinstance(parsed, Hello):
            self.register_osc_client(addr[0], parsed)
        elif isinstance(parsed, ControlIntent):
            known = self.osc_clients.get(parsed.user)
            if known is not None and known[0] == addr[0]:
                self.osc_clients[parsed.user] = (addr[0], self._wall())
            self.queue.append(parsed)
            self.stats["events"] += 1
        else:
            logger.info("ignoring %s from %s", msg.address, addr[0])
            self.stats["ignored"] += 1

    def register_osc_client(self, ip: str, hello: Hello) -> None:
        known = self.osc_clients.get(hello.user)
        if known is None or known[0] != ip:
            logger.info("osc client for user %d now at %s", hello.user, ip)
        self.osc_clients[hello.user] = (ip, self._wall())
        # answer immediately so a fresh client is never blank for a full
        # broadcast interval
        self._send_snapshot_to(ip)

    def add_panel(self, user: int) -> tuple[int, asyncio.Queue]:
        for cid, (owner, old) in list(self.panels.items()):
            if owner == user:
                logger.info("panel %d replaced by a newer one for user %d", cid, user)
                self.panels.pop(cid)
                old.put_nowait(
                    {"type": "error", "message": "replaced by a newer panel"}
                )
        cid = self._next_ws_id
        self._next_ws_id += 1
        queue: asyncio.Queue = asyncio.Queue()
        self.panels[cid] = (user, queue)
        return cid, queue

    def drop_panel(self, cid: int) -> None:
        self.panels.pop(cid, None)

    # -- tick / fan-out ------------------------------------------------------

    def tick_block(self) -> None:
        """Drain queued events at the current block boundary, then advance."""
        while self.queue:
            intent = self.queue.popleft()
            ev = ControlEvent(self.host.clock, intent.user, intent.kind, intent.track)
            self.host.apply(ev)
        self.host.advance(self.config.block_size)
        if self.host.dirty or self.host.clock >= self._next_broadcast:
            self.broadcast()

    def snapshot_message(self) -> dict:
        return {"type": "state", "seq": self.seq, **self.host.payload()}

    def _osc_addresses(self) -> set[Address]:
        port = self.config.osc_broadcast_port
        return {(ip, port) for ip, _ in self.osc_clients.values()}

    def _send_snapshot_to(self, ip: str) -> None:
        addr = (ip, self.config.osc_broadcast_port)
        for msg in snapshot_messages(self.host.payload()):
            self._udp_send(encode(msg), addr)

    def broadcast(self) -> None:
        now = self._wall()
        self.sweep(now)
        self.seq += 1
        payload = self.host.payload()
        wire = [encode(m) for m in snapshot_messages(payload)]
        targets = self._osc_addresses()
        for addr in targets:
            for data in wire:
                self._udp_send(data, addr)
        ws_msg = {"type": "state", "seq": self.seq, **payload}
        notes = []
        while self.host.diagnostics:
            notes.append(self.host.diagnostics.popleft())
        for text in notes:
            data = encode(debug_message(text))
            for addr in targets:
                self._udp_send(data, addr)
        for _, queue in self.panels.values():
            for text in notes:
                queue.put_nowait({"type": "error", "message": text})
            queue.put_nowait(ws_msg)
        self.host.dirty = False
        self._next_broadcast = self.host.clock + self._interval
        self.stats["broadcasts"] += 1

    def sweep(self, now: float) -> None:
        ttl = self.config.client_ttl_s
        stale = [
            user
            for user, (_, seen) in self.osc_clients.items()
            if now - seen > ttl
        ]
        for user in stale:
            logger.info("osc client for user %d timed out", user)
            del self.osc_clients[user]


def build_app(server: SessionServer):
    """The HTTP/WebSocket face of a server core."""
    app = FastAPI(title="mrdaw", docs_url=None, redoc_url=None)

    @app.websocket("/panel")
    async def panel(ws: WebSocket) -> None:
        await ws.accept()
        cid = None
        sender = None
        try:
            hello = await ws.receive_json()
            if (
                not isinstance(hello, dict)
                or hello.get("type") != "hello"
                or not isinstance(hello.get("user"), int)
            ):
                await ws.send_json({"type": "error", "message": "say hello first"})
                await ws.close(code=1002)
                return
            cid, queue = server.add_panel(hello["user"])
            logger.info("panel %d connected (user %d)", cid, hello["user"])
            await ws.send_json(server.snapshot_message())

            async def pump() -> None:
                while True:
                    await ws.send_json(await queue.get())

            sender = asyncio.create_task(pump())
            while True:
                data = await ws.receive_json()
                try:
                    server.queue.append(parse_panel_event(data))
                    server.stats["events"] += 1
                except ValueError as e:
                    await ws.send_json({"type": "error", "message": str(e)})
        except WebSocketDisconnect:
            pass
        except ValueError:
            logger.info("panel %s sent undecodable frame; dropping", cid)
        finally:
            if sender is not None:
                sender.cancel()
            if cid is not None:
                server.drop_panel(cid)
                logger.info("panel %d gone", cid)

    @app.post("/export")
    async def export() -> dict:
        try:
            paths = server.host.export_wav(server.config.export_dir)
        except RuntimeError as e:
            raise HTTPException(status_code=409, detail=str(e)) from None
        return {"files": [str(p) for p in paths]}

    @app.get("/status")
    async def status() -> dict:
        state = server.host.state
        return {
            "clock": server.host.clock,
            "transport": state.transport.value,
            "looplen": state.master_len or 0,
            "seq": server.seq,
            "osc_clients": len(server.osc_clients),
            "panels": len(server.panels),
            "stats": dict(server.stats),
        }

    static = server.config.static_dir
    if static and Path(static).is_dir():
        app.mount("/", StaticFiles(directory=static, html=True), name="panel")
    else:

        @app.get("/")
        async def index() -> JSONResponse:
            return JSONResponse(
                {"service": "mrdaw", "panel": "no static bundle installed"}
            )

    return app


class _OscProtocol(asyncio.DatagramProtocol):
    def __init__(self, server: SessionServer) -> None:
        self.server = server

    def connection_made(self, transport) -> None:  # pragma: no cover - trivial
        self.transport = transport

    def datagram_received(self, data: bytes, addr: Address) -> None:
        self.server.handle_datagram(data, addr)


async def _tick_forever(server: SessionServer) -> None:
    """Keep the sample clock glued to the wall clock, one block at a time.

    After a stall (debugger, laptop sleep) this catches up in a burst rather
    than slewing, so loop positions stay consistent with elapsed real time.
    """
    cfg = server.config
    sr = cfg.session.sample_rate
    block_s = cfg.block_size / sr
    origin = server._wall() - server.host.clock / sr
    while True:
        target = int((server._wall() - origin) * sr)
        while server.host.clock + cfg.block_size <= target:
            server.tick_block()
        await asyncio.sleep(block_s / 2)


async def _serve(config: ServerConfig) -> None:
    import uvicorn

    server = SessionServer(config)
    loop = asyncio.get_running_loop()
    transport, _ = await loop.create_datagram_endpoint(
        lambda: _OscProtocol(server),
        local_addr=(config.host, config.osc_port),
    )
    server._udp_send = transport.sendto
    ticker = asyncio.create_task(_tick_forever(server))
    app = build_app(server)
    uv = uvicorn.Server(
        uvicorn.Config(
            app,
            host=config.host,
            port=config.ws_port,
            log_level="warning",
            lifespan="off",
        )
    )
    logger.info(
        "listening: osc udp/%d, broadcasts udp/%d, panel http/%d",
        config.osc_port,
        config.osc_broadcast_port,
        config.ws_port,
    )
    try:
        await uv.serve()
    finally:
        ticker.cancel()
        transport.close()


def run_server(config: ServerConfig) -> None:
    asyncio.run(_serve(config))
