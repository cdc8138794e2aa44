"""Bit-exact binary and text interchange formats for timestamp streams.

Binary layout (little-endian throughout):

    header, 32 bytes:
        offset  0: magic, 8 bytes, b"BLTTAG01"
        offset  8: version, u32, must be 1
        offset 12: resolution_ps, u64, tick size in picoseconds
        offset 20: channel_count, u16
        offset 22: reserved, 10 zero bytes
    records, 16 bytes each, in global time order (ties by channel ascending):
        offset +0: time, u64, units of resolution_ps
        offset +8: channel, u8
        offset +9: flags, u8 (bit 0: time was rounded at write; others zero)
        offset +10: padding, 6 zero bytes

The version-1 profile is deliberately strict so that any single corrupted
header bit is detected: resolution_ps must be 1, 2, or 25 times a power of
ten (1 ps internal, 25 ps for 40 GSPS sampling, 2 ns FPGA class, and decade
multiples), and channel_count must be 1 or 2 (this is a two-detector
instrument format). Every reserved byte must be zero.

The text twin is line-oriented: a ``# resolution_ps=N`` header followed by
``ticks_ps,channel`` rows in the same global order, lossless both ways.
"""

from __future__ import annotations

import numpy as np

from .photonsim import EventStream, StreamOrigin

MAGIC = b"BLTTAG01"
VERSION = 1
HEADER_SIZE = 32
RECORD_SIZE = 16

_RECORD_DTYPE = np.dtype(
    [("time", "<u8"), ("channel", "u1"), ("flags", "u1"), ("padding", "u1", (6,))]
)

SUPPORTED_RESOLUTIONS = frozenset(
    m * 10**k for m in (1, 2, 25) for k in range(0, 13)
)
MAX_CHANNELS = 2
_FLAG_ROUNDED = 0x01
_TICK_MAX = 2**63 - 1


class TagFileError(ValueError):
    """Malformed tag file; ``offset`` is the first offending byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} at offset {offset}")
        self.offset = offset


class BadMagicError(TagFileError):
    pass


class HeaderFieldError(TagFileError):
    pass


class TruncatedRecordError(TagFileError):
    pass


class RecordFieldError(TagFileError):
    pass


class TimeOrderError(TagFileError):
    pass


class UnrepresentableTimeError(TagFileError):
    """A tick is not an exact multiple of the resolution in exact mode."""


class TextFormatError(TagFileError):
    """Malformed text tag file; message names the line number."""


def _merge_streams(streams):
    """Flatten streams into (ticks, channels) in global time order, channel tiebreak."""
    if not 1 <= len(streams) <= MAX_CHANNELS:
        raise TagFileError(
            f"version-{VERSION} files carry 1 to {MAX_CHANNELS} channels, got {len(streams)}"
        )
    ticks = np.concatenate([s.times for s in streams]) if streams else np.empty(0, np.int64)
    channels = np.concatenate(
        [np.full(len(s), i, dtype=np.uint8) for i, s in enumerate(streams)]
    )
    order = np.lexsort((channels, ticks))
    return ticks[order], channels[order]


def _check_resolution(resolution_ps: int) -> int:
    resolution_ps = int(resolution_ps)
    if resolution_ps not in SUPPORTED_RESOLUTIONS:
        raise TagFileError(
            f"unsupported resolution {resolution_ps} ps "
            "(must be 1, 2, or 25 times a power of ten)"
        )
    return resolution_ps


def write_tags(streams, resolution_ps: int, path, rounding: str = "exact") -> None:
    """Write streams to a single binary tag file at the given tick size.

    ``rounding='exact'`` refuses times that are not exact multiples of the
    resolution; ``rounding='round'`` rounds to nearest and sets flag bit 0 on
    each affected record.
    """
    resolution_ps = _check_resolution(resolution_ps)
    if rounding not in ("exact", "round"):
        raise TagFileError(f"rounding must be 'exact' or 'round', got {rounding!r}")
    ticks, channels = _merge_streams(streams)
    if np.any(ticks < 0):
        raise TagFileError("negative event times are not representable")
    remainder = ticks % resolution_ps
    inexact = remainder != 0
    if inexact.any():
        if rounding == "exact":
            first = int(np.argmax(inexact))
            raise UnrepresentableTimeError(
                f"time {int(ticks[first])} ps is not a multiple of {resolution_ps} ps "
                "(use rounding='round')"
            )
        quantized = (ticks + resolution_ps // 2) // resolution_ps
    else:
        quantized = ticks // resolution_ps

    records = np.zeros(ticks.size, dtype=_RECORD_DTYPE)
    records["time"] = quantized.astype(np.uint64)
    records["channel"] = channels
    if inexact.any():
        records["flags"][inexact] = _FLAG_ROUNDED
        # re-impose global order: rounding can reorder events closer than one tick
        order = np.lexsort((records["channel"], records["time"]))
        records = records[order]

    header = bytearray(HEADER_SIZE)
    header[0:8] = MAGIC
    header[8:12] = VERSION.to_bytes(4, "little")
    header[12:20] = resolution_ps.to_bytes(8, "little")
    header[20:22] = len(streams).to_bytes(2, "little")
    with open(path, "wb") as f:
        f.write(bytes(header))
        f.write(records.tobytes())


def read_tags(path):
    """Read and validate a binary tag file.

    Returns (streams, header) where streams are per-channel sorted
    ``EventStream`` objects in picosecond ticks (time * resolution_ps) and
    header is a dict with ``resolution_ps`` and ``channel_count``. The stream
    duration is estimated as the latest event time (files do not carry the
    acquisition duration).
    """
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 8 or data[0:8] != MAGIC:
        raise BadMagicError("bad magic", offset=0)
    if len(data) < HEADER_SIZE:
        raise TruncatedRecordError(
            f"header needs {HEADER_SIZE} bytes, file has {len(data)}", offset=len(data)
        )
    version = int.from_bytes(data[8:12], "little")
    if version != VERSION:
        raise HeaderFieldError(f"unsupported version {version}", offset=8)
    resolution_ps = int.from_bytes(data[12:20], "little")
    if resolution_ps not in SUPPORTED_RESOLUTIONS:
        raise HeaderFieldError(f"unsupported resolution {resolution_ps} ps", offset=12)
    channel_count = int.from_bytes(data[20:22], "little")
    if not 1 <= channel_count <= MAX_CHANNELS:
        raise HeaderFieldError(f"channel count {channel_count} outside 1..{MAX_CHANNELS}", offset=20)
    reserved = data[22:32]
    if any(reserved):
        bad = next(i for i, byte in enumerate(reserved) if byte)
        raise HeaderFieldError("nonzero reserved byte", offset=22 + bad)

    body = data[HEADER_SIZE:]
    if len(body) % RECORD_SIZE != 0:
        raise TruncatedRecordError(
            f"trailing {len(body) % RECORD_SIZE} bytes are not a full record",
            offset=HEADER_SIZE + len(body) - len(body) % RECORD_SIZE,
        )
    records = np.frombuffer(body, dtype=_RECORD_DTYPE)

    bad_channel = records["channel"] >= channel_count
    if bad_channel.any():
        first = int(np.argmax(bad_channel))
        raise RecordFieldError(
            f"record channel {int(records['channel'][first])} >= channel count {channel_count}",
            offset=HEADER_SIZE + RECORD_SIZE * first + 8,
        )
    bad_flags = (records["flags"] & np.uint8(0xFF ^ _FLAG_ROUNDED)) != 0
    if bad_flags.any():
        first = int(np.argmax(bad_flags))
        raise RecordFieldError(
            f"record flags 0x{int(records['flags'][first]):02x} has reserved bits set",
            offset=HEADER_SIZE + RECORD_SIZE * first + 9,
        )
    bad_padding = records["padding"].any(axis=1) if records.size else np.empty(0, bool)
    if records.size and bad_padding.any():
        first = int(np.argmax(bad_padding))
        raise RecordFieldError(
            "record padding bytes are not zero",
            offset=HEADER_SIZE + RECORD_SIZE * first + 10,
        )
    times = records["time"]
    if times.size and np.any(np.diff(times.astype(np.int64)) < 0):
        first = int(np.argmax(np.diff(times.astype(np.int64)) < 0)) + 1
        raise TimeOrderError(
            "record times regress", offset=HEADER_SIZE + RECORD_SIZE * first
        )
    if times.size and int(times.max()) * resolution_ps > _TICK_MAX:
        raise RecordFieldError(
            "event time overflows 64-bit picosecond ticks",
            offset=HEADER_SIZE + RECORD_SIZE * int(np.argmax(times)),
        )

    ticks = times.astype(np.int64) * resolution_ps
    duration_s = (float(ticks[-1]) if ticks.size else 0.0) / 1e12
    streams = [
        EventStream(
            channel=ch,
            times=ticks[records["channel"] == ch],
            duration_s=duration_s,
            origin=StreamOrigin.LOADED,
        )
        for ch in range(channel_count)
    ]
    header = {"resolution_ps": resolution_ps, "channel_count": channel_count}
    return streams, header


def write_text_tags(streams, resolution_ps: int, path) -> None:
    """Write the newline-delimited debug twin: ``ticks_ps,channel`` rows."""
    resolution_ps = _check_resolution(resolution_ps)
    if not 1 <= len(streams) <= MAX_CHANNELS:
        raise TagFileError(
            f"version-{VERSION} files carry 1 to {MAX_CHANNELS} channels, got {len(streams)}"
        )
    ticks, channels = _merge_streams(streams)
    with open(path, "w", newline="\n") as f:
        f.write(f"# resolution_ps={resolution_ps}\n")
        f.write(f"# channels={len(streams)}\n")
        for t, ch in zip(ticks.tolist(), channels.tolist()):
            f.write(f"{t},{ch}\n")


def read_text_tags(path):
    """Read the text format; returns (streams, header) like ``read_tags``.

    Leading ``# key=value`` lines are metadata; ``resolution_ps`` is required,
    ``channels`` is optional (inferred from the data when absent).
    """
    with open(path, "r", newline="") as f:
        lines = f.read().splitlines()
    meta = {}
    body_start = 0
    for line in lines:
        if not line.startswith("#"):
            break
        body_start += 1
        stripped = line.lstrip("#").strip()
        if "=" in stripped:
            key, _, value = stripped.partition("=")
            meta[key.strip()] = value.strip()
    if "resolution_ps" not in meta:
        raise TextFormatError("line 1: missing '# resolution_ps=N' header")
    try:
        resolution_ps = int(meta["resolution_ps"])
    except ValueError:
        raise TextFormatError(f"line 1: bad resolution {meta['resolution_ps']!r}") from None
    if resolution_ps not in SUPPORTED_RESOLUTIONS:
        raise TextFormatError(f"line 1: unsupported resolution {resolution_ps} ps")
    declared_channels = None
    if "channels" in meta:
        try:
            declared_channels = int(meta["channels"])
        except ValueError:
            raise TextFormatError(f"bad channels header {meta['channels']!r}") from None
        if not 1 <= declared_channels <= MAX_CHANNELS:
            raise TextFormatError(f"channels {declared_channels} outside 1..{MAX_CHANNELS}")
    ticks = []
    channels = []
    for lineno, line in enumerate(lines[body_start:], start=body_start + 1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise TextFormatError(f"line {lineno}: expected 'ticks_ps,channel', got {line!r}")
        try:
            t = int(parts[0])
            ch = int(parts[1])
        except ValueError:
            raise TextFormatError(f"line {lineno}: non-integer field in {line!r}") from None
        if t < 0:
            raise TextFormatError(f"line {lineno}: negative time {t}")
        if not 0 <= ch < MAX_CHANNELS:
            raise TextFormatError(f"line {lineno}: channel {ch} outside 0..{MAX_CHANNELS - 1}")
        if ticks and t < ticks[-1]:
            raise TextFormatError(f"line {lineno}: time {t} regresses")
        if t % resolution_ps != 0:
            raise TextFormatError(
                f"line {lineno}: time {t} is not a multiple of resolution {resolution_ps}"
            )
        ticks.append(t)
        channels.append(ch)
    ticks_arr = np.asarray(ticks, dtype=np.int64)
    channels_arr = np.asarray(channels, dtype=np.uint8)
    inferred = max(int(channels_arr.max()) + 1, 1) if ticks else 1
    channel_count = declared_channels if declared_channels is not None else inferred
    if ticks and inferred > channel_count:
        raise TextFormatError(
            f"channel {int(channels_arr.max())} exceeds declared channel count {channel_count}"
        )
    duration_s = (float(ticks_arr[-1]) if ticks else 0.0) / 1e12
    streams = [
        EventStream(
            channel=ch,
            times=ticks_arr[channels_arr == ch],
            duration_s=duration_s,
            origin=StreamOrigin.LOADED,
        )
        for ch in range(channel_count)
    ]
    return streams, {"resolution_ps": resolution_ps, "channel_count": channel_count}
