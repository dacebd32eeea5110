"""Tests for the live session server core and its HTTP/WebSocket face."""

import asyncio

import pytest
from fastapi.testclient import TestClient

from mrdaw.osc import (
    ControlIntent,
    decode,
    encode,
    hello_message,
    pedal_message,
    toggle_message,
)
from mrdaw.server import (
    ServerConfig,
    SessionServer,
    _OscProtocol,
    build_app,
    parse_panel_event,
)
from mrdaw.session import EventKind, SessionConfig, TrackVariant
from mrdaw.wavefile import read_wav_float32

SNAPSHOT_BURST = 10  # 8 track labels + transport + looplen


class FakeClock:
    def __init__(self):
        self.now = 0.0

    def __call__(self):
        return self.now


class FakeUdp:
    def __init__(self):
        self.sent = []

    def __call__(self, data, addr):
        self.sent.append((data, addr))

    def decoded(self):
        return [(decode(data), addr) for data, addr in self.sent]


def make_server(**overrides):
    udp = FakeUdp()
    clock = FakeClock()
    config = ServerConfig(**overrides)
    server = SessionServer(config, udp_send=udp, wall_clock=clock)
    return server, udp, clock


def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        ServerConfig(backend="jack")
    with pytest.raises(ValueError):
        ServerConfig(block_size=0)
    with pytest.raises(ValueError):
        ServerConfig(broadcast_interval_ms=0.0)
    with pytest.raises(ValueError):
        # 4800 samples at 48 kHz is 100 ms, twice the broadcast interval
        ServerConfig(block_size=4800)
    with pytest.raises(ValueError):
        ServerConfig(inputs={3: "x.wav"})
    with pytest.raises(ValueError):
        ServerConfig(client_ttl_s=0.0)


def test_hello_registers_and_answers_with_snapshot():
    server, udp, _ = make_server()
    server.handle_datagram(encode(hello_message(1, "pedal")), ("10.0.0.5", 5555))
    assert server.osc_clients[1][0] == "10.0.0.5"
    assert len(udp.sent) == SNAPSHOT_BURST
    addresses = {msg.address for msg, _ in udp.decoded()}
    assert "/mrdaw/state/transport" in addresses
    assert "/mrdaw/state/looplen" in addresses
    assert all(addr == ("10.0.0.5", 9001) for _, addr in udp.sent)


def test_newer_hello_replaces_the_older_address():
    """One OSC registration per user: a hello from a new address takes over."""
    server, udp, _ = make_server()
    server.handle_datagram(encode(hello_message(1)), ("10.0.0.5", 5555))
    server.handle_datagram(encode(hello_message(1)), ("10.0.0.6", 5555))
    server.handle_datagram(encode(hello_message(2)), ("10.0.0.7", 5555))
    assert server.osc_clients[1][0] == "10.0.0.6"
    udp.sent.clear()
    server.broadcast()
    targets = {addr for _, addr in udp.sent}
    assert targets == {("10.0.0.6", 9001), ("10.0.0.7", 9001)}


def test_malformed_datagram_is_counted_not_fatal():
    server, udp, _ = make_server()
    server.handle_datagram(b"\x01\x02not osc", ("10.0.0.5", 5555))
    assert server.stats["malformed"] == 1
    assert not server.osc_clients
    assert not udp.sent


def test_unknown_address_is_ignored():
    server, _, _ = make_server()
    from mrdaw.osc import OscMessage

    server.handle_datagram(encode(OscMessage("/other/thing", ())), ("10.0.0.5", 1))
    assert server.stats["ignored"] == 1
    assert not server.queue


def test_pedal_datagram_drives_the_session():
    server, udp, _ = make_server()
    server.handle_datagram(encode(hello_message(1)), ("10.0.0.5", 5555))
    udp.sent.clear()
    server.handle_datagram(encode(pedal_message(1, "record")), ("10.0.0.5", 5555))
    assert len(server.queue) == 1
    server.tick_block()
    assert not server.queue
    track = server.host.state.recording_track_of(1)
    assert track is not None
    labels = {
        msg.address: msg.args
        for msg, _ in udp.decoded()
        if msg.address.startswith("/mrdaw/state/track/")
    }
    assert labels[f"/mrdaw/state/track/{track}"] == ("recording",)


def test_events_are_stamped_at_block_boundaries():
    server, _, _ = make_server()
    server.tick_block()  # clock now 256
    server.queue.append(ControlIntent(1, EventKind.RECORD_TOGGLE))
    server.tick_block()  # applied at 256
    for _ in range(20):
        server.tick_block()
    server.queue.append(ControlIntent(1, EventKind.RECORD_TOGGLE))
    server.tick_block()  # applied at 22 * 256
    state = server.host.state
    assert state.master_len == 21 * 256
    assert state.master_len % server.config.block_size == 0


def test_periodic_broadcast_cadence():
    server, udp, _ = make_server()
    server.handle_datagram(encode(hello_message(2)), ("10.0.0.9", 5555))
    udp.sent.clear()
    for _ in range(100):
        server.tick_block()
    # 50 ms at 48 kHz is 2400 samples; with 256-sample blocks that lands
    # every tenth block, so 100 quiet blocks yield exactly ten snapshots
    assert len(udp.sent) == 10 * SNAPSHOT_BURST
    assert server.stats["broadcasts"] == 10


def test_stale_osc_client_is_swept():
    server, udp, clock = make_server(client_ttl_s=10.0)
    server.handle_datagram(encode(hello_message(1)), ("10.0.0.5", 5555))
    udp.sent.clear()
    clock.now = 11.0
    for _ in range(12):
        server.tick_block()
    assert not server.osc_clients
    assert not udp.sent


def test_traffic_refreshes_the_ttl():
    server, _, clock = make_server(client_ttl_s=10.0)
    server.handle_datagram(encode(hello_message(1)), ("10.0.0.5", 5555))
    clock.now = 8.0
    server.handle_datagram(encode(toggle_message(1, 2)), ("10.0.0.5", 5555))
    clock.now = 14.0  # 6 s after the toggle, 14 s after hello
    server.sweep(clock.now)
    assert 1 in server.osc_clients


def test_panel_queues_receive_state_and_errors():
    server, _, _ = make_server()
    cid, queue = server.add_panel(1)
    server.queue.append(ControlIntent(99, EventKind.RECORD_TOGGLE))  # no such user
    for _ in range(10):
        server.tick_block()
    messages = []
    while not queue.empty():
        messages.append(queue.get_nowait())
    kinds = [m["type"] for m in messages]
    assert "error" in kinds and "state" in kinds
    assert "user" in next(m for m in messages if m["type"] == "error")["message"]
    snap = next(m for m in messages if m["type"] == "state")
    assert len(snap["tracks"]) == 8
    server.drop_panel(cid)
    server.queue.append(ControlIntent(1, EventKind.RECORD_TOGGLE))
    server.tick_block()
    assert queue.empty()


def test_second_panel_for_a_user_replaces_the_first():
    server, _, _ = make_server()
    cid1, queue1 = server.add_panel(1)
    cid2, queue2 = server.add_panel(1)
    other, _ = server.add_panel(2)
    assert cid1 not in server.panels
    assert {cid2, other} <= set(server.panels)
    farewell = queue1.get_nowait()
    assert farewell["type"] == "error" and "replaced" in farewell["message"]
    server.broadcast()
    assert queue1.empty()
    assert queue2.get_nowait()["type"] == "state"


def test_rejected_event_reaches_osc_debug():
    server, udp, _ = make_server()
    server.handle_datagram(encode(hello_message(1)), ("10.0.0.5", 5555))
    udp.sent.clear()
    server.handle_datagram(encode(toggle_message(1, 99)), ("10.0.0.5", 5555))
    for _ in range(10):
        server.tick_block()
    debugs = [m for m, _ in udp.decoded() if m.address == "/mrdaw/debug"]
    assert debugs and "track" in debugs[0].args[0]


def test_concurrent_toggles_from_two_clients():
    """Toggles from different clients in one tick window both land."""
    server, udp, _ = make_server()
    server.handle_datagram(encode(hello_message(1)), ("10.0.0.5", 5555))
    server.handle_datagram(encode(hello_message(2)), ("10.0.0.6", 5555))

    def press(user, ip):
        server.handle_datagram(encode(pedal_message(user, "record")), (ip, 5555))

    press(1, "10.0.0.5")
    for _ in range(20):
        server.tick_block()
    press(1, "10.0.0.5")
    server.tick_block()
    press(2, "10.0.0.6")
    for _ in range(20):
        server.tick_block()
    press(2, "10.0.0.6")
    server.tick_block()

    udp.sent.clear()
    server.handle_datagram(encode(toggle_message(1, 0)), ("10.0.0.5", 5555))
    server.handle_datagram(encode(toggle_message(2, 4)), ("10.0.0.6", 5555))
    server.tick_block()
    payload = server.host.payload()
    assert payload["tracks"][0]["state"] == "muted"
    assert payload["tracks"][4]["state"] == "muted"
    assert {addr for _, addr in udp.sent} == {
        ("10.0.0.5", 9001),
        ("10.0.0.6", 9001),
    }


def test_any_bytes_on_the_control_port_are_survivable():
    import random

    server, _, _ = make_server()
    rng = random.Random(404)
    valid = encode(pedal_message(1, "record"))
    for i in range(500):
        if rng.random() < 0.3:
            blob = bytearray(valid)
            blob[rng.randrange(len(blob))] ^= 1 << rng.randrange(8)
            data = bytes(blob[: rng.randint(1, len(blob))])
        else:
            data = rng.randbytes(rng.randint(0, 64))
        server.handle_datagram(data, ("10.0.0.99", i))
    # still fully functional afterwards
    server.queue.clear()
    server.handle_datagram(encode(hello_message(1)), ("10.0.0.5", 5555))
    server.handle_datagram(encode(pedal_message(1, "record")), ("10.0.0.5", 5555))
    server.tick_block()
    assert server.host.state.recording_track_of(1) is not None


def test_broadcast_seq_strictly_increases():
    server, _, _ = make_server()
    _, queue = server.add_panel(1)
    server.queue.append(ControlIntent(1, EventKind.RECORD_TOGGLE))
    for _ in range(30):
        server.tick_block()
    server.queue.append(ControlIntent(1, EventKind.RECORD_TOGGLE))
    for _ in range(30):
        server.tick_block()
    seqs = []
    while not queue.empty():
        msg = queue.get_nowait()
        if msg["type"] == "state":
            seqs.append(msg["seq"])
    assert len(seqs) >= 6
    assert all(a < b for a, b in zip(seqs, seqs[1:]))


def test_parse_panel_event():
    intent = parse_panel_event({"type": "event", "user": 1, "event": "record"})
    assert intent == ControlIntent(1, EventKind.RECORD_TOGGLE)
    intent = parse_panel_event(
        {"type": "event", "user": 2, "event": "toggle", "track": 5}
    )
    assert intent == ControlIntent(2, EventKind.TRACK_TOGGLE, 5)
    for bad in (
        "nope",
        {"type": "hello"},
        {"type": "event", "user": "1", "event": "record"},
        {"type": "event", "user": 1, "event": "detonate"},
        {"type": "event", "user": 1, "event": "toggle"},
        {"type": "event", "user": 1, "event": "toggle", "track": "3"},
        {"type": "event", "user": 1, "event": "record", "track": 3},
    ):
        with pytest.raises(ValueError):
            parse_panel_event(bad)


def record_one_loop(server, blocks=20):
    server.queue.append(ControlIntent(1, EventKind.RECORD_TOGGLE))
    for _ in range(blocks):
        server.tick_block()
    server.queue.append(ControlIntent(1, EventKind.RECORD_TOGGLE))
    server.tick_block()


def test_export_endpoint(tmp_path):
    server, _, _ = make_server(export_dir=str(tmp_path / "out"))
    app = build_app(server)
    with TestClient(app) as client:
        response = client.post("/export")
        assert response.status_code == 409
        record_one_loop(server)
        response = client.post("/export")
        assert response.status_code == 200
        files = response.json()["files"]
        assert len(files) == 2
        for name in files:
            samples, rate = read_wav_float32(name)
            assert rate == 48000
            assert len(samples) == server.host.state.master_len


def test_status_and_index_routes():
    server, _, _ = make_server()
    app = build_app(server)
    with TestClient(app) as client:
        data = client.get("/status").json()
        assert data["transport"] == "stopped"
        assert data["looplen"] == 0
        assert data["panels"] == 0
        index = client.get("/").json()
        assert index["service"] == "mrdaw"


def test_static_dir_is_served(tmp_path):
    (tmp_path / "index.html").write_text("<title>panel</title>", encoding="utf-8")
    server, _, _ = make_server(static_dir=str(tmp_path))
    app = build_app(server)
    with TestClient(app) as client:
        response = client.get("/")
        assert response.status_code == 200
        assert "panel" in response.text


def test_websocket_hello_and_event_flow():
    server, _, _ = make_server()
    app = build_app(server)
    with TestClient(app) as client:
        with client.websocket_connect("/panel") as ws:
            ws.send_json({"type": "hello", "user": 1})
            first = ws.receive_json()
            assert first["type"] == "state"
            assert first["transport"] == "stopped"
            assert len(first["tracks"]) == 8
            ws.send_json({"type": "event", "user": 1, "event": "record"})
            ws.send_json({"type": "event", "user": 1, "event": "explode"})
            reply = ws.receive_json()
            assert reply["type"] == "error"
            assert "explode" in reply["message"]
    assert len(server.queue) == 1
    assert server.queue[0] == ControlIntent(1, EventKind.RECORD_TOGGLE)
    assert not server.panels  # disconnect cleaned up


def test_websocket_requires_hello_first():
    server, _, _ = make_server()
    app = build_app(server)
    with TestClient(app) as client:
        with client.websocket_connect("/panel") as ws:
            ws.send_json({"type": "event", "user": 1, "event": "record"})
            reply = ws.receive_json()
            assert reply["type"] == "error"
            assert "hello" in reply["message"]
    assert not server.queue


def test_udp_endpoint_end_to_end():
    """Real sockets: hello and a pedal press through the datagram protocol."""

    received = []

    class Recorder(asyncio.DatagramProtocol):
        def datagram_received(self, data, addr):
            received.append(decode(data))

    async def scenario():
        loop = asyncio.get_running_loop()
        client_transport, _ = await loop.create_datagram_endpoint(
            Recorder, local_addr=("127.0.0.1", 0)
        )
        client_port = client_transport.get_extra_info("sockname")[1]
        config = ServerConfig(osc_broadcast_port=client_port)
        server = SessionServer(config)
        server_transport, _ = await loop.create_datagram_endpoint(
            lambda: _OscProtocol(server),
            local_addr=("127.0.0.1", 0),
        )
        server._udp_send = server_transport.sendto
        server_port = server_transport.get_extra_info("sockname")[1]
        server_addr = ("127.0.0.1", server_port)

        client_transport.sendto(encode(hello_message(1)), server_addr)
        await asyncio.sleep(0.05)
        assert 1 in server.osc_clients
        client_transport.sendto(encode(pedal_message(1, "record")), server_addr)
        await asyncio.sleep(0.05)
        server.tick_block()
        await asyncio.sleep(0.05)
        client_transport.close()
        server_transport.close()

    asyncio.run(scenario())
    transports = [m.args for m in received if m.address == "/mrdaw/state/transport"]
    assert ("stopped",) in transports  # initial hello answer
    assert ("playing",) in transports  # after the record press
    tracks = [
        m for m in received if m.address == "/mrdaw/state/track/0" and m.args == ("recording",)
    ]
    assert tracks


def test_first_block_applies_at_clock_zero():
    server, _, _ = make_server()
    server.queue.append(ControlIntent(2, EventKind.RECORD_TOGGLE))
    server.tick_block()
    track = server.host.state.recording_track_of(2)
    assert server.host.state.tracks[track].started_at == 0
    assert server.host.state.tracks[track].variant is TrackVariant.RECORDING


def test_server_cli_maps_flags_into_config(monkeypatch):
    import mrdaw.server
    from mrdaw.cli import server_main

    captured = {}
    monkeypatch.setattr(
        mrdaw.server, "run_server", lambda cfg: captured.setdefault("cfg", cfg)
    )
    code = server_main(
        [
            "--broadcast-port", "9101",
            "--backend", "osc-out",
            "--osc-out-target", "192.168.1.20:7001",
        ]
    )
    assert code == 0
    cfg = captured["cfg"]
    assert cfg.osc_broadcast_port == 9101
    assert cfg.backend == "osc-out"
    assert (cfg.osc_out_host, cfg.osc_out_port) == ("192.168.1.20", 7001)


def test_server_cli_rejects_bad_target(capsys):
    from mrdaw.cli import server_main

    assert server_main(["--osc-out-target", "nowhere"]) == 2
    assert "error:" in capsys.readouterr().err
