"""OSC 1.0 wire codec (int32/float32/string/blob subset) and address map.

Big-endian scalars, 4-byte alignment throughout, typetag string mandatory.
``decode`` is total over byte strings in the sense that it either returns a
message or raises :class:`OscDecodeError` with the byte offset where parsing
failed — never any other exception.

Control surface addresses:

    /mrdaw/<user>/pedal/record      pedal gestures, no args
    /mrdaw/<user>/pedal/play
    /mrdaw/<user>/pedal/stop
    /mrdaw/<user>/ui/track/<i>/toggle
    /mrdaw/<user>/hello             optional client-name string arg

State fan-out addresses:

    /mrdaw/state/track/<i>          [s] empty|recording|playing|muted|selected
    /mrdaw/state/transport          [s] playing|stopped
    /mrdaw/state/looplen            [i] master length in samples, 0 = unset
    /mrdaw/debug                    [s] free-form diagnostics
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Union

from .session import EventKind

OscArg = Union[int, float, str, bytes]

_INT32_MIN = -(2**31)
_INT32_MAX = 2**31 - 1

_ADDRESS_BAD = set(" \t\r\n\0")


class OscDecodeError(Exception):
    """A malformed packet; ``offset`` is where decoding gave up."""

    def __init__(self, offset: int, reason: str) -> None:
        super().__init__(f"offset {offset}: {reason}")
        self.offset = offset
        self.reason = reason


@dataclass(frozen=True, slots=True)
class OscMessage:
    address: str
    args: tuple[OscArg, ...] = ()


def _pad4(n: int) -> int:
    return (n + 3) & ~3


def _encode_string(s: str) -> bytes:
    raw = s.encode("utf-8")
    if b"\0" in raw:
        raise ValueError("OSC strings cannot contain NUL")
    raw += b"\0"
    return raw + b"\0" * (_pad4(len(raw)) - len(raw))


def encode(msg: OscMessage) -> bytes:
    """Serialize a message; raises ValueError on unencodable content."""
    addr = msg.address
    if not addr.startswith("/"):
        raise ValueError(f"address must begin with '/': {addr!r}")
    if any(c in _ADDRESS_BAD or not c.isascii() or not c.isprintable() for c in addr):
        raise ValueError(f"address contains illegal characters: {addr!r}")
    tags = ","
    body: list[bytes] = []
    for a in msg.args:
        if isinstance(a, bool):
            raise ValueError("bool is not an OSC type in this subset")
        if isinstance(a, int):
            if not _INT32_MIN <= a <= _INT32_MAX:
                raise ValueError(f"int argument out of int32 range: {a}")
            tags += "i"
            body.append(struct.pack(">i", a))
        elif isinstance(a, float):
            tags += "f"
            body.append(struct.pack(">f", a))
        elif isinstance(a, str):
            tags += "s"
            body.append(_encode_string(a))
        elif isinstance(a, (bytes, bytearray)):
            raw = bytes(a)
            tags += "b"
            body.append(
                struct.pack(">i", len(raw)) + raw + b"\0" * (_pad4(len(raw)) - len(raw))
            )
        else:
            raise ValueError(f"unsupported argument type {type(a).__name__}")
    return _encode_string(addr) + _encode_string(tags) + b"".join(body)


def _read_string(data: bytes, off: int) -> tuple[str, int]:
    end = data.find(b"\0", off)
    if end < 0:
        raise OscDecodeError(len(data), "unterminated string")
    try:
        s = data[off:end].decode("utf-8")
    except UnicodeDecodeError:
        raise OscDecodeError(off, "string is not valid UTF-8") from None
    nxt = off + _pad4(end - off + 1)
    if nxt > len(data):
        raise OscDecodeError(len(data), "truncated string padding")
    for j in range(end + 1, nxt):
        if data[j] != 0:
            raise OscDecodeError(j, "nonzero string padding")
    return s, nxt


def decode(data: bytes) -> OscMessage:
    """Parse a datagram; raises OscDecodeError (only) on malformed input."""
    if not data:
        raise OscDecodeError(0, "empty packet")
    address, off = _read_string(data, 0)
    if not address.startswith("/"):
        raise OscDecodeError(0, "address must begin with '/'")
    if off == len(data):
        raise OscDecodeError(off, "missing typetag string")
    tag_off = off
    tags, off = _read_string(data, off)
    if not tags.startswith(","):
        raise OscDecodeError(tag_off, "typetag string must begin with ','")
    args: list[OscArg] = []
    for pos, tag in enumerate(tags[1:]):
        if tag == "i":
            if off + 4 > len(data):
                raise OscDecodeError(len(data), "truncated int32 argument")
            args.append(struct.unpack_from(">i", data, off)[0])
            off += 4
        elif tag == "f":
            if off + 4 > len(data):
                raise OscDecodeError(len(data), "truncated float32 argument")
            args.append(struct.unpack_from(">f", data, off)[0])
            off += 4
        elif tag == "s":
            s, off = _read_string(data, off)
            args.append(s)
        elif tag == "b":
            if off + 4 > len(data):
                raise OscDecodeError(len(data), "truncated blob length")
            (blen,) = struct.unpack_from(">i", data, off)
            if blen < 0:
                raise OscDecodeError(off, "negative blob length")
            total = off + 4 + _pad4(blen)
            if total > len(data):
                raise OscDecodeError(len(data), "truncated blob data")
            args.append(bytes(data[off + 4 : off + 4 + blen]))
            off = total
        else:
            raise OscDecodeError(tag_off + 1 + pos, f"unsupported type tag {tag!r}")
    if off != len(data):
        raise OscDecodeError(off, "trailing bytes after arguments")
    return OscMessage(address, tuple(args))


# --- address map ------------------------------------------------------------

PEDAL_ACTIONS = {
    "record": EventKind.RECORD_TOGGLE,
    "play": EventKind.PLAY_ALL,
    "stop": EventKind.STOP_ALL,
}

TRACK_STATE_LABELS = ("empty", "recording", "playing", "muted", "selected")


@dataclass(frozen=True, slots=True)
class ControlIntent:
    """A decoded upstream gesture, not yet validated against a session."""

    user: int
    kind: EventKind
    track: Optional[int] = None


@dataclass(frozen=True, slots=True)
class Hello:
    user: int
    name: str = ""


def pedal_message(user: int, action: str) -> OscMessage:
    if action not in PEDAL_ACTIONS:
        raise ValueError(f"unknown pedal action {action!r}")
    return OscMessage(f"/mrdaw/{user}/pedal/{action}")


def toggle_message(user: int, track: int) -> OscMessage:
    return OscMessage(f"/mrdaw/{user}/ui/track/{track}/toggle")


def hello_message(user: int, name: str = "") -> OscMessage:
    args = (name,) if name else ()
    return OscMessage(f"/mrdaw/{user}/hello", args)


def parse_control(msg: OscMessage) -> Union[ControlIntent, Hello, None]:
    """Map an upstream message to an intent; None for unrecognized traffic.

    User and track ids are parsed but not range-checked here — the session
    layer owns rejection so that bad ids still produce diagnostics.
    """
    parts = msg.address.split("/")
    if len(parts) < 4 or parts[0] != "" or parts[1] != "mrdaw":
        return None
    if not parts[2].isdigit():
        return None
    user = int(parts[2])
    rest = parts[3:]
    if rest == ["hello"]:
        name = msg.args[0] if msg.args and isinstance(msg.args[0], str) else ""
        return Hello(user, name)
    if len(rest) == 2 and rest[0] == "pedal" and rest[1] in PEDAL_ACTIONS:
        return ControlIntent(user, PEDAL_ACTIONS[rest[1]])
    if (
        len(rest) == 4
        and rest[0] == "ui"
        and rest[1] == "track"
        and rest[2].isdigit()
        and rest[3] == "toggle"
    ):
        return ControlIntent(user, EventKind.TRACK_TOGGLE, int(rest[2]))
    return None


def track_state_message(track: int, label: str) -> OscMessage:
    if label not in TRACK_STATE_LABELS:
        raise ValueError(f"unknown track state label {label!r}")
    return OscMessage(f"/mrdaw/state/track/{track}", (label,))


def transport_message(label: str) -> OscMessage:
    return OscMessage("/mrdaw/state/transport", (label,))


def looplen_message(master_len: Optional[int]) -> OscMessage:
    return OscMessage("/mrdaw/state/looplen", (master_len or 0,))


def debug_message(text: str) -> OscMessage:
    return OscMessage("/mrdaw/debug", (text,))


def snapshot_messages(payload: dict) -> list[OscMessage]:
    """Render a state snapshot payload as the OSC fan-out message set.

    Empty tracks under a user's cursor are reported as "selected", matching
    what the track panel highlights.
    """
    selected = set(payload["cursors"].values())
    msgs = []
    for tr in payload["tracks"]:
        label = tr["state"]
        if label == "empty" and tr["index"] in selected:
            label = "selected"
        msgs.append(track_state_message(tr["index"], label))
    msgs.append(transport_message(payload["transport"]))
    msgs.append(looplen_message(payload["looplen"]))
    return msgs
