"""Versioned binary checkpoint container plus JSON sidecar.

Layout: magic, format version, section count, then named sections (name,
length, payload). The ``__meta__`` section is UTF-8 JSON carrying the epoch,
the full resolved run config, and its hash; everything else is opaque bytes
owned by the component that wrote it. A small JSON sidecar with the config
hash and epoch is written next to the blob for quick inspection.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

from stylerl.errors import CheckpointError

MAGIC = b"STYLRLC1"
VERSION = 1
META_SECTION = "__meta__"


def write_checkpoint(path, meta: dict, sections: dict[str, bytes]):
    path = Path(path)
    parts = [MAGIC, struct.pack("<I", VERSION)]
    payloads = {META_SECTION: json.dumps(meta, sort_keys=True).encode("utf-8")}
    payloads.update(sections)
    parts.append(struct.pack("<I", len(payloads)))
    for name, payload in payloads.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<Q", len(payload)))
        parts.append(payload)
    path.write_bytes(b"".join(parts))
    sidecar = {
        "config_hash": meta.get("config_hash"),
        "epoch": meta.get("epoch"),
        "seed": meta.get("seed"),
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, sort_keys=True) + "\n", encoding="utf-8")


def read_checkpoint(path) -> tuple[dict, dict[str, bytes]]:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version = struct.unpack_from("<I", data, 8)[0]
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    n_sections = struct.unpack_from("<I", data, 12)[0]
    pos = 16
    sections: dict[str, bytes] = {}
    try:
        for _ in range(n_sections):
            (name_len,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (size,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            if pos + size > len(data):
                raise CheckpointError(f"{path}: truncated section {name!r}")
            sections[name] = data[pos : pos + size]
            pos += size
    except struct.error:
        raise CheckpointError(f"{path}: truncated checkpoint") from None
    if META_SECTION not in sections:
        raise CheckpointError(f"{path}: missing metadata section")
    try:
        meta = json.loads(sections.pop(META_SECTION).decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt metadata ({exc})") from None
    return meta, sections
