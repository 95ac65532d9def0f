"""On-disk formats: system matrices, checkpoints, manifests, CSV and PGM.

Binary containers share one layout::

    magic (4 bytes) | header length (uint32 LE) | JSON header (UTF-8) | payload

System-matrix payloads are little-endian float32 ``[K][ny][nx][2]`` with
interleaved (re, im). Checkpoint payloads are named little-endian float32
tensors concatenated in header order. Headers are serialized with sorted
keys and compact separators so identical content gives identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .core import FreqDescriptor, Grid, SystemMatrix
from .errors import FormatError

SM_MAGIC = b"SMFG"
CKPT_MAGIC = b"SMCK"
SM_VERSION = 1
CKPT_VERSION = 1
MANIFEST_VERSION = 1


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def sha256_bytes(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


def sha256_file(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def atomic_write(path, data: bytes | str):
    """Write via a temporary sibling and rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _pack(magic: bytes, header: dict, payload: bytes) -> bytes:
    h = canonical_json(header)
    return magic + struct.pack("<I", len(h)) + h + payload


def _unpack(blob: bytes, magic: bytes) -> tuple[dict, bytes]:
    if len(blob) < 8 or blob[:4] != magic:
        raise FormatError(f"bad magic: expected {magic!r}")
    (n,) = struct.unpack("<I", blob[4:8])
    if len(blob) < 8 + n:
        raise FormatError("truncated header")
    try:
        header = json.loads(blob[8:8 + n].decode("utf-8"))
    except ValueError as e:
        raise FormatError(f"unreadable header: {e}") from None
    return header, blob[8 + n:]


def sm_to_bytes(sm: SystemMatrix) -> bytes:
    inter = np.empty((sm.k, sm.grid.ny, sm.grid.nx, 2), dtype="<f4")
    imgs = sm.images()
    inter[..., 0] = imgs.real
    inter[..., 1] = imgs.imag
    payload = inter.tobytes()
    header = {
        "format": "smforge-sm",
        "version": SM_VERSION,
        "endianness": "little",
        "dtype": "float32",
        "grid": sm.grid.to_dict(),
        "k": sm.k,
        "freqs": [f.to_dict() for f in sm.freqs],
        "row_snr": None if sm.row_snr is None else [float(v) for v in sm.row_snr],
        "payload_bytes": len(payload),
        "sha256": sha256_bytes(payload),
    }
    return _pack(SM_MAGIC, header, payload)


def sm_from_bytes(blob: bytes) -> SystemMatrix:
    header, payload = _unpack(blob, SM_MAGIC)
    if header.get("format") != "smforge-sm" or header.get("version") != SM_VERSION:
        raise FormatError(f"unsupported system-matrix version {header.get('version')!r}")
    if header.get("endianness") != "little" or header.get("dtype") != "float32":
        raise FormatError("only little-endian float32 payloads are supported")
    grid = Grid(**header["grid"])
    k = int(header["k"])
    expected = k * grid.n * 2 * 4
    if len(payload) != expected or header.get("payload_bytes", expected) != expected:
        raise FormatError(f"truncated payload: header implies {expected} bytes, found {len(payload)}")
    if "sha256" in header and sha256_bytes(payload) != header["sha256"]:
        raise FormatError("payload checksum mismatch")
    arr = np.frombuffer(payload, dtype="<f4").reshape(k, grid.n, 2).astype(np.float64)
    freqs = tuple(FreqDescriptor.from_dict(d) for d in header["freqs"])
    if len(freqs) != k:
        raise FormatError("frequency descriptors disagree with K")
    return SystemMatrix(grid, freqs, arr[..., 0] + 1j * arr[..., 1], header.get("row_snr"))


def save_sm(sm: SystemMatrix, path):
    atomic_write(path, sm_to_bytes(sm))


def load_sm(path) -> SystemMatrix:
    return sm_from_bytes(Path(path).read_bytes())


def save_checkpoint(path, state: dict[str, np.ndarray], meta: dict):
    """``meta`` carries the JSON-able configs, iteration and seed."""
    tensors, chunks, offset = [], [], 0
    for name, arr in state.items():
        a = np.ascontiguousarray(np.asarray(arr), dtype="<f4")
        b = a.tobytes()
        tensors.append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": len(b)})
        chunks.append(b)
        offset += len(b)
    payload = b"".join(chunks)
    header = {
        "format": "smforge-ckpt", "version": CKPT_VERSION, "endianness": "little", "dtype": "float32",
        "tensors": tensors, "sha256": sha256_bytes(payload), **meta,
    }
    atomic_write(path, _pack(CKPT_MAGIC, header, payload))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    header, payload = _unpack(Path(path).read_bytes(), CKPT_MAGIC)
    if header.get("format") != "smforge-ckpt" or header.get("version") != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {header.get('version')!r}")
    if sha256_bytes(payload) != header.get("sha256"):
        raise FormatError("checkpoint checksum mismatch")
    state = {}
    for t in header["tensors"]:
        raw = payload[t["offset"]:t["offset"] + t["nbytes"]]
        if len(raw) != t["nbytes"]:
            raise FormatError(f"truncated tensor {t['name']}")
        state[t["name"]] = np.frombuffer(raw, dtype="<f4").reshape(t["shape"]).copy()
    return state, header


def write_csv(path, header: list[str], rows):
    import io as _io

    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    atomic_write(path, buf.getvalue())


def image_csv(path, img: np.ndarray):
    write_csv(path, [f"x{i}" for i in range(img.shape[1])], img.tolist())


def write_pgm(path, img: np.ndarray):
    """8-bit binary PGM, scaled so the maximum maps to 255."""
    img = np.asarray(img, dtype=float)
    peak = np.abs(img).max() if img.size else 0
    px = np.zeros(img.shape, np.uint8) if peak == 0 else np.clip(np.round(255 * np.abs(img) / peak), 0, 255).astype(np.uint8)
    head = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
    atomic_write(path, head + px.tobytes())


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P5":
        raise FormatError("not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], np.uint8).reshape(h, w)


def write_manifest(out_dir, manifest: dict, name: str = "manifest.json") -> Path:
    """Record file checksums (relative to ``out_dir``) and write the manifest."""
    out_dir = Path(out_dir)
    files = manifest.get("files", {})
    manifest = {**manifest, "format_version": MANIFEST_VERSION,
                "files": {rel: sha256_file(out_dir / rel) for rel in sorted(files)}}
    path = out_dir / name
    atomic_write(path, json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return path


def load_manifest(path, verify: bool = True) -> dict:
    path = Path(path)
    m = json.loads(path.read_text())
    if m.get("format_version") != MANIFEST_VERSION:
        raise FormatError(f"unsupported manifest version {m.get('format_version')!r}")
    if verify:
        for rel, digest in m.get("files", {}).items():
            f = path.parent / rel
            if not f.exists() or sha256_file(f) != digest:
                raise FormatError(f"checksum mismatch for {rel}")
        splits = m.get("splits")
        if splits:
            seen: dict = {}
            for name, members in splits.items():
                for item in members:
                    key = json.dumps(item, sort_keys=True)
                    if key in seen:
                        raise FormatError(f"splits {seen[key]!r} and {name!r} overlap")
                    seen[key] = name
    return m
