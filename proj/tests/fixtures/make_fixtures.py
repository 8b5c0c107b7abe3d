#!/usr/bin/env python3
"""Regenerates the golden wire and episode fixtures.

Written against the byte layout only; shares no code with the C++ encoder.
Run from anywhere: python3 tests/fixtures/make_fixtures.py
"""

import json
import pathlib
import struct
import zlib

HERE = pathlib.Path(__file__).resolve().parent


def crc32_bitwise(data: bytes) -> int:
    # Reflected CRC-32, polynomial 0x04C11DB7 (0xEDB88320 reversed).
    crc = 0xFFFFFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = (crc >> 1) ^ (0xEDB88320 if crc & 1 else 0)
    return crc ^ 0xFFFFFFFF


assert crc32_bitwise(b"123456789") == 0xCBF43926

VIDEO, AUDIO, PROPRIO, METADATA, HEARTBEAT = range(5)


def frame(msg_type: int, ts: int, seq: int, payload: bytes, flags: int = 0) -> bytes:
    head = b"PLYT" + struct.pack("<BBBBQII", 1, msg_type, flags, 0, ts, seq, len(payload))
    assert len(head) == 24
    body = head + payload
    crc = crc32_bitwise(body)
    assert crc == zlib.crc32(body)
    return body + struct.pack("<I", crc)


def video_payload(width: int, height: int, rgb: bytes, rle: bool) -> bytes:
    out = struct.pack("<HHB", width, height, 1 if rle else 0)
    if not rle:
        return out + rgb
    px = [rgb[i:i + 3] for i in range(0, len(rgb), 3)]
    i = 0
    while i < len(px):
        run = 1
        while i + run < len(px) and run < 255 and px[i + run] == px[i]:
            run += 1
        out += bytes([run]) + px[i]
        i += run
    return out


def audio_payload(samples) -> bytes:
    return struct.pack("<II", 48000, len(samples)) + struct.pack(f"<{len(samples)}h", *samples)


def proprio_payload(values) -> bytes:
    return struct.pack("<I", len(values)) + struct.pack(f"<{len(values)}d", *values)


def fnv1a64(s: bytes) -> int:
    h = 0xCBF29CE484222325
    for c in s:
        h ^= c
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def golden_rgb() -> bytes:
    # 6x2 frame mixing runs and single pixels.
    px = [(10, 20, 30)] * 4 + [(255, 0, 0), (0, 255, 0)] + [(7, 7, 7)] * 3 + [(1, 2, 3), (7, 7, 7), (200, 100, 50)]
    return b"".join(bytes(p) for p in px)


def long_run_rgb() -> bytes:
    # 300 identical pixels force a run split at 255.
    return bytes((9, 8, 7)) * 300


def main() -> None:
    samples = [((k * 37) % 65536) - 32768 for k in range(960)]
    samples[0], samples[1], samples[2] = 0, 32767, -32768
    proprio = [0.5 * k - 3.0 for k in range(28)]
    meta = json.dumps({"scenario": "golden", "streams": ["video", "audio"]}, separators=(",", ":")).encode()

    messages = [
        ("metadata.bin", METADATA, 0, 0, meta, 0),
        ("video_raw.bin", VIDEO, 0, 1, video_payload(6, 2, golden_rgb(), False), 0),
        ("video_rle.bin", VIDEO, 33333, 2, video_payload(6, 2, golden_rgb(), True), 0),
        ("video_rle_long.bin", VIDEO, 66667, 3, video_payload(100, 3, long_run_rgb(), True), 0),
        ("audio.bin", AUDIO, 20000, 4, audio_payload(samples), 0),
        ("proprio.bin", PROPRIO, 40000, 5, proprio_payload(proprio), 0),
        ("heartbeat.bin", HEARTBEAT, 1_000_000, 6, b"", 0x80),
    ]
    wires = []
    for name, t, ts, seq, payload, flags in messages:
        w = frame(t, ts, seq, payload, flags)
        (HERE / name).write_bytes(w)
        wires.append((t, ts, seq, w))

    inventory = b'{"golden":true}'
    header = b"PLYTEPI1" + struct.pack("<IIQQQI", 1, 0, 1_700_000_000_000_000, 0x1122334455667788, fnv1a64(b"golden"), len(inventory))
    header += inventory
    body = bytearray(header)
    index = []
    for t, ts, seq, w in wires:
        index.append((t, len(body), ts, seq))
        body += w
    index_offset = len(body)
    body += b"PLYTIDX1" + struct.pack("<Q", len(index))
    for t, off, ts, seq in index:
        body += struct.pack("<BQQI", t, off, ts, seq)
    body += struct.pack("<Q", index_offset) + b"PLYTEND1"
    (HERE / "episode.plyt").write_bytes(bytes(body))


if __name__ == "__main__":
    main()
