"""Plain key=value manifests and content hashing for reproducible runs."""

from __future__ import annotations

import hashlib
from pathlib import Path

from .errors import FormatError


def write_manifest(path, mapping: dict):
    lines = []
    for k, v in mapping.items():
        k = str(k)
        v = str(v)
        if "=" in k or "\n" in k or "\n" in v:
            raise ValueError(f"manifest field {k!r} not representable")
        lines.append(f"{k}={v}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_manifest(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for ln, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{ln}: expected key=value")
        k, v = line.split("=", 1)
        out[k] = v
    return out


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def files_digest(paths) -> str:
    """Order-independent digest of a set of files (sorted by name)."""
    h = hashlib.sha256()
    for p in sorted(Path(p) for p in paths):
        h.update(p.name.encode("utf-8"))
        h.update(b"\x00")
        h.update(p.read_bytes())
        h.update(b"\x01")
    return h.hexdigest()
