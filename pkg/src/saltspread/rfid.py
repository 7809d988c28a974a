"""Roadside tag payloads and the onboard reader's zone bookkeeping.

Wire format, 16 bytes, big-endian::

    0  magic      0x5254 ("RT")
    2  version    0x01
    3  command
    4  tag_id     uint32
    8  magnitude  int16
    10 extent_ft  uint16
    12 reserved   0x0000
    14 crc        CRC-16/CCITT-FALSE over bytes 0..13
"""

from __future__ import annotations

import binascii
import json
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable

from .controller import Material, Pattern, ZoneSummary
from .errors import InputError

MAGIC = 0x5254
VERSION = 0x01
PAYLOAD_LEN = 16
_LAYOUT = struct.Struct(">HBBIhHH")


class Command(IntEnum):
    RateAdjust = 1
    WidthSet = 2
    MaterialSet = 3
    StopApplication = 4
    PatternSet = 5


MAGNITUDE_RANGE = {
    Command.RateAdjust: (-1000, 5000),
    Command.WidthSet: (1, 40),
    Command.MaterialSet: (Material.SALT, Material.ALTERNATIVE),
    Command.StopApplication: (0, 0),
    Command.PatternSet: (min(Pattern), max(Pattern)),
}


class TagError(InputError):
    pass


class BadMagic(TagError):
    pass


class UnsupportedVersion(TagError):
    pass


class CrcMismatch(TagError):
    pass


class TagRangeError(TagError):
    pass


def crc16_ccitt_false(data: bytes) -> int:
    return binascii.crc_hqx(data, 0xFFFF)


@dataclass(frozen=True)
class RoadsideTag:
    tag_id: int
    command: Command
    magnitude: int
    extent_ft: int

    def __post_init__(self):
        object.__setattr__(self, "command", _command(self.command))
        validate(self)

    def to_json(self) -> dict:
        return {
            "tag_id": self.tag_id,
            "command": self.command.name,
            "magnitude": self.magnitude,
            "extent_ft": self.extent_ft,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RoadsideTag":
        try:
            return cls(int(obj["tag_id"]), obj["command"], int(obj["magnitude"]), int(obj["extent_ft"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise TagRangeError(f"bad tag object {obj!r}: {exc}") from None


def _command(c) -> Command:
    if isinstance(c, Command):
        return c
    try:
        return Command[c] if isinstance(c, str) else Command(int(c))
    except (KeyError, ValueError):
        raise TagRangeError(f"unknown command {c!r}") from None


def validate(tag: RoadsideTag) -> None:
    if not 0 <= tag.tag_id <= 0xFFFFFFFF:
        raise TagRangeError(f"tag_id out of range: {tag.tag_id}")
    lo, hi = MAGNITUDE_RANGE[tag.command]
    if not lo <= tag.magnitude <= hi:
        raise TagRangeError(
            f"magnitude out of range for {tag.command.name}: {tag.magnitude} not in [{lo}, {hi}]"
        )
    if not 1 <= tag.extent_ft <= 0xFFFF:
        raise TagRangeError(f"extent_ft out of range: {tag.extent_ft}")


def encode_tag(tag: RoadsideTag) -> bytes:
    validate(tag)
    body = _LAYOUT.pack(MAGIC, VERSION, tag.command, tag.tag_id, tag.magnitude, tag.extent_ft, 0)
    return body + crc16_ccitt_false(body).to_bytes(2, "big")


def decode_tag(payload: bytes) -> RoadsideTag:
    """Validate and decode a payload.  The CRC is checked before anything else."""
    payload = bytes(payload)
    if len(payload) != PAYLOAD_LEN:
        raise TagError(f"payload must be {PAYLOAD_LEN} bytes, got {len(payload)}")
    body, crc = payload[:14], int.from_bytes(payload[14:], "big")
    if crc16_ccitt_false(body) != crc:
        raise CrcMismatch(f"CRC mismatch: computed {crc16_ccitt_false(body):04X}, payload {crc:04X}")
    magic, version, command, tag_id, magnitude, extent, reserved = _LAYOUT.unpack(body)
    if magic != MAGIC:
        raise BadMagic(f"bad magic 0x{magic:04X}")
    if version != VERSION:
        raise UnsupportedVersion(f"unsupported version 0x{version:02X}")
    if reserved:
        raise TagRangeError("reserved bytes must be zero")
    return RoadsideTag(tag_id, _command(command), magnitude, extent)


# ---------------------------------------------------------------------------
# reader state machine
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ActiveZone:
    tag: RoadsideTag
    start_chainage_ft: float
    seq: int

    @property
    def end_chainage_ft(self) -> float:
        return self.start_chainage_ft + self.tag.extent_ft

    def covers(self, chainage_ft: float) -> bool:
        return self.start_chainage_ft <= chainage_ft < self.end_chainage_ft


@dataclass(frozen=True)
class ReaderState:
    zones: tuple[ActiveZone, ...] = ()
    chainage_ft: float = 0.0
    reads: int = 0


def advance(reader: ReaderState, chainage_ft: float) -> ReaderState:
    """Move to ``chainage_ft`` and drop zones whose end has been reached."""
    if chainage_ft < reader.chainage_ft:
        raise InputError(
            f"chainage decreased from {reader.chainage_ft} to {chainage_ft}; replay is forward-only"
        )
    live = tuple(z for z in reader.zones if z.end_chainage_ft > chainage_ft)
    return ReaderState(live, chainage_ft, reader.reads)


def on_tag_read(reader: ReaderState, tag: RoadsideTag, chainage_ft: float) -> ReaderState:
    reader = advance(reader, chainage_ft)
    if any(z.tag.tag_id == tag.tag_id for z in reader.zones):
        return reader
    zone = ActiveZone(tag, chainage_ft, reader.reads)
    return ReaderState(reader.zones + (zone,), chainage_ft, reader.reads + 1)


def summarize(reader: ReaderState) -> ZoneSummary:
    width = material = pattern = None
    stop = False
    adjust = []
    # later reads win for width / material / pattern
    for z in sorted(reader.zones, key=lambda z: z.seq):
        cmd, mag = z.tag.command, z.tag.magnitude
        if cmd is Command.RateAdjust:
            adjust.append(mag)
        elif cmd is Command.WidthSet:
            width = mag / 10.0
        elif cmd is Command.MaterialSet:
            material = Material(mag)
        elif cmd is Command.PatternSet:
            pattern = Pattern(mag)
        elif cmd is Command.StopApplication:
            stop = True
    mult = 1.0
    # sorted so floating point rounding does not depend on read order
    for mag in sorted(adjust):
        mult *= 1.0 + mag / 1000.0
    return ZoneSummary(mult, width, material, pattern, stop)


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Placement:
    chainage_ft: float
    tag: RoadsideTag


def parse_placements(text: str | bytes, source: str = "<tags>") -> list[Placement]:
    """Parse a tag placement JSON array, sorted by chainage (stable)."""
    try:
        items = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{source}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(items, list):
        raise InputError(f"{source}: expected a JSON array")
    out = []
    for i, item in enumerate(items):
        try:
            c = float(item["chainage_ft"])
            tag = RoadsideTag.from_json(item["tag"])
        except (KeyError, TypeError, ValueError, TagError) as exc:
            raise InputError(f"{source}: entry {i}: {exc}") from None
        if not c >= 0:
            raise InputError(f"{source}: entry {i}: chainage_ft must be >= 0")
        out.append(Placement(c, tag))
    out.sort(key=lambda p: p.chainage_ft)
    return out


def dump_placements(placements: Iterable[Placement]) -> str:
    items = [{"chainage_ft": p.chainage_ft, "tag": p.tag.to_json()} for p in placements]
    return json.dumps(items, indent=2) + "\n"
