"""
On-disk formats.

Every pipeline artifact is one of:

- binary array container (features, SPS, DOA targets, DOA probabilities)
      "DOAB" | uint16 version | 4-byte kind | uint16 ndim | uint32 valid
      | ndim x uint32 dims | row-major little-endian float32 payload
- parameter container
      "DOAP" | uint16 version | uint32 header length | JSON header
      | float32 blocks in header order | SHA-256 of everything before it
- CSV with a fixed header (grid, scene events, manifest, peaks, estimates,
  history, reports)
- JSON sidecar metadata (*.meta.json)
- 4-channel 32-bit float WAV

Readers check magic, version and kind and refuse anything else.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np
import soundfile as sf

from doanet.errors import MissingInputError, ValidationError
from doanet.geometry import DirectionGrid
from doanet.model import AmbisonicBuffer, Direction, RoomSpec, SceneSpec, SoundEvent
from doanet.network import NetworkConfig, NetworkParameters

FORMAT_VERSION = 1
ARRAY_MAGIC = b"DOAB"
PARAM_MAGIC = b"DOAP"
ARRAY_KINDS = ("FEAT", "SPS_", "DOAT", "PROB")

_ARRAY_HEAD = struct.Struct("<4sH4sHI")
_PARAM_HEAD = struct.Struct("<4sHI")


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingInputError(f"File not found: {path}")
    return path


def _prepare(path: str | Path) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Binary array container
# ---------------------------------------------------------------------------


def write_array(path: str | Path, data: np.ndarray, kind: str, valid_frames: Optional[int] = None) -> Path:
    if kind not in ARRAY_KINDS:
        raise ValidationError(f"Unknown array kind {kind!r}; choose from {ARRAY_KINDS}")
    arr = np.ascontiguousarray(data, dtype="<f4")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"Refusing to write non-finite {kind} data to {path}")
    valid = arr.shape[0] if valid_frames is None else int(valid_frames)
    out = _prepare(path)
    head = _ARRAY_HEAD.pack(ARRAY_MAGIC, FORMAT_VERSION, kind.encode("ascii"), arr.ndim, valid)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    out.write_bytes(head + dims + arr.tobytes(order="C"))
    return out


def read_array(path: str | Path, kind: str) -> tuple[np.ndarray, int]:
    """Return (array, valid_frames); the array is float32."""
    p = _require(Path(path))
    raw = p.read_bytes()
    if len(raw) < _ARRAY_HEAD.size:
        raise ValidationError(f"{p}: truncated header")
    magic, version, tag, ndim, valid = _ARRAY_HEAD.unpack_from(raw, 0)
    if magic != ARRAY_MAGIC:
        raise ValidationError(f"{p}: not a doanet array file")
    if version != FORMAT_VERSION:
        raise ValidationError(f"{p}: format version {version}, expected {FORMAT_VERSION}")
    if tag.decode("ascii") != kind:
        raise ValidationError(f"{p}: holds {tag.decode('ascii')!r} data, expected {kind!r}")
    offset = _ARRAY_HEAD.size
    shape = struct.unpack_from(f"<{ndim}I", raw, offset)
    offset += 4 * ndim
    expected = int(np.prod(shape)) * 4
    if len(raw) - offset != expected:
        raise ValidationError(f"{p}: payload is {len(raw) - offset} bytes, expected {expected}")
    data = np.frombuffer(raw, dtype="<f4", offset=offset).reshape(shape).astype(np.float32)
    return data, int(valid)


# ---------------------------------------------------------------------------
# Parameter container
# ---------------------------------------------------------------------------


def write_parameters(
    path: str | Path,
    params: NetworkParameters,
    extra: Optional[Mapping[str, np.ndarray]] = None,
) -> Path:
    """Write network arrays (and optional optimizer blocks) with a checksum trailer."""
    blocks = dict(params.arrays)
    for key, value in (extra or {}).items():
        blocks[key] = value
    names = list(blocks)
    header = {
        "version": params.version,
        "config": params.config.to_dict(),
        "names": names,
        "shapes": [list(blocks[n].shape) for n in names],
        "dtype": "float32",
    }
    head_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = bytearray(_PARAM_HEAD.pack(PARAM_MAGIC, FORMAT_VERSION, len(head_bytes)))
    body += head_bytes
    for n in names:
        body += np.ascontiguousarray(blocks[n], dtype="<f4").tobytes(order="C")
    digest = hashlib.sha256(bytes(body)).digest()
    out = _prepare(path)
    out.write_bytes(bytes(body) + digest)
    return out


def read_parameters(path: str | Path) -> tuple[NetworkParameters, dict[str, np.ndarray]]:
    """Return (network parameters, extra blocks such as 'adam.*')."""
    p = _require(Path(path))
    raw = p.read_bytes()
    if len(raw) < _PARAM_HEAD.size + 32:
        raise ValidationError(f"{p}: truncated parameter file")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ValidationError(f"{p}: checksum mismatch")
    magic, version, head_len = _PARAM_HEAD.unpack_from(body, 0)
    if magic != PARAM_MAGIC:
        raise ValidationError(f"{p}: not a doanet parameter file")
    if version != FORMAT_VERSION:
        raise ValidationError(f"{p}: format version {version}, expected {FORMAT_VERSION}")
    offset = _PARAM_HEAD.size
    header = json.loads(body[offset : offset + head_len].decode("utf-8"))
    offset += head_len

    arrays: dict[str, np.ndarray] = {}
    extra: dict[str, np.ndarray] = {}
    for name, shape in zip(header["names"], header["shapes"]):
        count = int(np.prod(shape))
        block = np.frombuffer(body, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += 4 * count
        (extra if name.startswith("adam.") else arrays)[name] = block.astype(np.float32)
    if offset != len(body):
        raise ValidationError(f"{p}: {len(body) - offset} trailing bytes after parameter blocks")
    config = NetworkConfig.from_dict(header["config"])
    return NetworkParameters(config, arrays, int(header["version"])), extra


# ---------------------------------------------------------------------------
# CSV / JSON
# ---------------------------------------------------------------------------


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> Path:
    out = _prepare(path)
    with out.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(header), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in header})
    return out


def read_csv(path: str | Path) -> list[dict[str, str]]:
    p = _require(Path(path))
    with p.open("r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def write_meta(path: str | Path, data: Mapping[str, Any]) -> Path:
    out = _prepare(path)
    payload = {"format_version": FORMAT_VERSION, **data}
    out.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    return out


def read_meta(path: str | Path) -> dict[str, Any]:
    p = _require(Path(path))
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{p}: invalid JSON ({exc})") from None
    if data.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"{p}: format version {data.get('format_version')}, expected {FORMAT_VERSION}")
    return dict(data)


def meta_path(path: str | Path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".meta.json")


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with _require(Path(path)).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_grid_csv(path: str | Path, grid: DirectionGrid) -> Path:
    rows = (
        {"index": i, "azimuth_deg": f"{d.azimuth_deg:g}", "elevation_deg": f"{d.elevation_deg:g}"}
        for i, d in enumerate(grid)
    )
    return write_csv(path, ["index", "azimuth_deg", "elevation_deg"], rows)


# ---------------------------------------------------------------------------
# Scenes
# ---------------------------------------------------------------------------

SCENE_FIELDS = [
    "event_id", "class", "onset_s", "duration_s", "azimuth_deg", "elevation_deg", "distance_m",
    "example_id", "x_m", "y_m", "z_m",
]


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def write_scene(csv_path: str | Path, spec: SceneSpec) -> Path:
    """Events as CSV plus scene-level fields in the sidecar metadata."""
    rows = []
    for ev in spec.events:
        pos = ev.source_position
        rows.append({
            "event_id": ev.event_id,
            "example_id": ev.example_id,
            "class": ev.class_name,
            "onset_s": repr(ev.onset),
            "duration_s": repr(ev.duration),
            "azimuth_deg": repr(ev.direction.azimuth_deg),
            "elevation_deg": repr(ev.direction.elevation_deg),
            "distance_m": _fmt(ev.distance),
            "x_m": _fmt(pos[0] if pos else None),
            "y_m": _fmt(pos[1] if pos else None),
            "z_m": _fmt(pos[2] if pos else None),
        })
    out = write_csv(csv_path, SCENE_FIELDS, rows)
    room = None
    if spec.room is not None:
        room = {
            "dimensions": list(spec.room.dimensions),
            "microphone_position": list(spec.room.microphone_position),
            "target_t60": spec.room.target_t60,
            "max_image_time": spec.room.max_image_time,
        }
    write_meta(meta_path(out), {
        "context": spec.context,
        "max_overlap": spec.max_overlap,
        "length": spec.length,
        "sample_rate": spec.sample_rate,
        "rng_seed": spec.rng_seed,
        "room": room,
    })
    return out


def _opt(value: str) -> Optional[float]:
    return float(value) if value != "" else None


def read_scene(csv_path: str | Path) -> SceneSpec:
    rows = read_csv(csv_path)
    meta = read_meta(meta_path(csv_path))
    events = []
    for row in rows:
        x, y, z = _opt(row["x_m"]), _opt(row["y_m"]), _opt(row["z_m"])
        events.append(SoundEvent(
            event_id=int(row["event_id"]),
            example_id=row["example_id"],
            class_name=row["class"],
            onset=float(row["onset_s"]),
            duration=float(row["duration_s"]),
            direction=Direction(float(row["azimuth_deg"]), float(row["elevation_deg"])),
            distance=_opt(row["distance_m"]),
            source_position=None if x is None or y is None or z is None else (x, y, z),
        ))
    room_data = meta.get("room")
    room = None
    if room_data:
        room = RoomSpec(
            tuple(room_data["dimensions"]),  # type: ignore[arg-type]
            tuple(room_data["microphone_position"]),  # type: ignore[arg-type]
            float(room_data["target_t60"]),
            room_data.get("max_image_time"),
        )
    return SceneSpec(
        context=meta["context"],
        max_overlap=int(meta["max_overlap"]),
        length=float(meta["length"]),
        sample_rate=int(meta["sample_rate"]),
        events=tuple(events),
        rng_seed=int(meta["rng_seed"]),
        room=room,
    )


# ---------------------------------------------------------------------------
# Audio
# ---------------------------------------------------------------------------


def write_wav(path: str | Path, buffer: AmbisonicBuffer) -> Path:
    out = _prepare(path)
    sf.write(out, buffer.channels.T.astype(np.float32), buffer.sample_rate, subtype="FLOAT")
    return out


def read_wav(path: str | Path) -> AmbisonicBuffer:
    p = _require(Path(path))
    data, sr = sf.read(p, dtype="float32", always_2d=True)
    if data.shape[1] != 4:
        raise ValidationError(f"{p}: expected 4 FOA channels, found {data.shape[1]}")
    return AmbisonicBuffer(data.T.astype(np.float64), int(sr))
