"""On-disk formats: episode files, checkpoints, run configs, PPM images.

All integers are little-endian. Both binary formats are length-exact: a
reader knows the full file size from the header (episodes) or from the
tensor table (checkpoints, whose trailing metadata block runs to EOF),
and trailing garbage is rejected. Round trips are byte-identical.
"""

from __future__ import annotations

import csv
import io
import struct
from pathlib import Path

import numpy as np

from dreamnav.data import Dataset, Episode
from dreamnav.errors import ConfigError, FormatError
from dreamnav.nn import ParamStore

EPISODE_MAGIC = b"DRMS"
CHECKPOINT_MAGIC = b"DRMW"
FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# episode files


def write_episode(path, episode: Episode) -> None:
    t1, h, w, c = episode.frames.shape
    n = t1 - 1
    adim = episode.actions.shape[1]
    buf = io.BytesIO()
    buf.write(EPISODE_MAGIC)
    buf.write(struct.pack("<IIIIII", FORMAT_VERSION, w, h, c, n, adim))
    buf.write(np.ascontiguousarray(episode.frames, dtype=np.uint8).tobytes())
    buf.write(episode.actions.astype("<f4").tobytes())
    buf.write(episode.labels.astype(np.uint8).tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_episode(path, target_type: int = 0) -> Episode:
    raw = Path(path).read_bytes()
    if len(raw) < 28:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    if raw[:4] != EPISODE_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    version, w, h, c, n, adim = struct.unpack("<IIIIII", raw[4:28])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    frames_bytes = (n + 1) * h * w * c
    actions_bytes = n * adim * 4
    labels_bytes = n + 1
    expected = 28 + frames_bytes + actions_bytes + labels_bytes
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, file has {len(raw)}")
    ofs = 28
    frames = np.frombuffer(raw, np.uint8, frames_bytes, ofs).reshape(n + 1, h, w, c).copy()
    ofs += frames_bytes
    actions = np.frombuffer(raw, "<f4", n * adim, ofs).reshape(n, adim).copy()
    ofs += actions_bytes
    labels = np.frombuffer(raw, np.uint8, labels_bytes, ofs).astype(bool)
    return Episode(frames=frames, actions=actions, labels=labels, target_type=target_type)


MANIFEST_NAME = "manifest.txt"


def write_dataset(out_dir, dataset: Dataset) -> list[str]:
    """One episode file per trajectory plus a manifest with counts and target ids."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    lines = ["# dreamnav episode manifest v1"]
    for i, ep in enumerate(dataset.episodes):
        name = f"episode_{i:05d}.drms"
        write_episode(out / name, ep)
        names.append(name)
        lines.append(f"{name}\t{ep.n_steps}\t{ep.target_type}")
    lines.append(f"total_episodes={dataset.n_episodes}")
    lines.append(f"total_triples={dataset.n_triples}")
    (out / MANIFEST_NAME).write_text("\n".join(lines) + "\n")
    return names


def read_dataset(in_dir) -> Dataset:
    root = Path(in_dir)
    manifest = root / MANIFEST_NAME
    if not manifest.exists():
        raise FormatError(f"no {MANIFEST_NAME} in {in_dir}")
    episodes = []
    total_triples = None
    for line in manifest.read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        if line.startswith("total_triples="):
            total_triples = int(line.split("=", 1)[1])
            continue
        if line.startswith("total_episodes="):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"malformed manifest line: {line!r}")
        name, steps, target = parts
        ep = read_episode(root / name, target_type=int(target))
        if ep.n_steps != int(steps):
            raise FormatError(f"{name}: manifest says {steps} steps, file has {ep.n_steps}")
        episodes.append(ep)
    ds = Dataset(episodes)
    if total_triples is not None and ds.n_triples != total_triples:
        raise FormatError(f"manifest total {total_triples} != loaded {ds.n_triples}")
    return ds


# ---------------------------------------------------------------------------
# checkpoints


def write_checkpoint(path, store: ParamStore, metadata: dict[str, str]) -> None:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    names = store.names()
    buf.write(struct.pack("<II", FORMAT_VERSION, len(names)))
    for name in names:
        data = store[name].data.astype("<f4")
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise ConfigError(f"parameter name too long: {name!r}")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        dims = data.shape
        buf.write(struct.pack("<B", len(dims)))
        buf.write(struct.pack(f"<{len(dims)}I", *dims))
        buf.write(np.ascontiguousarray(data).tobytes())
    meta_lines = [f"{k}={v}" for k, v in metadata.items()]
    buf.write(("\n".join(meta_lines) + "\n").encode("utf-8"))
    Path(path).write_bytes(buf.getvalue())


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header")
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    version, count = struct.unpack("<II", raw[4:12])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    ofs = 12
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", raw, ofs)
            ofs += 2
            name = raw[ofs : ofs + name_len].decode("utf-8")
            ofs += name_len
            (rank,) = struct.unpack_from("<B", raw, ofs)
            ofs += 1
            dims = struct.unpack_from(f"<{rank}I", raw, ofs)
            ofs += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(raw, "<f4", size, ofs).reshape(dims).copy()
            ofs += 4 * size
        except (struct.error, ValueError) as exc:
            raise FormatError(f"{path}: corrupt tensor table ({exc})") from exc
        if name in tensors:
            raise FormatError(f"{path}: duplicate tensor name {name!r}")
        tensors[name] = arr
    metadata: dict[str, str] = {}
    for line in raw[ofs:].decode("utf-8").splitlines():
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}: malformed metadata line {line!r}")
        k, v = line.split("=", 1)
        metadata[k] = v
    return tensors, metadata


# ---------------------------------------------------------------------------
# run configuration files


def parse_config_text(text: str, defaults: dict) -> dict:
    """Line-based key=value parsing against a typed default schema.

    Unknown keys are rejected; values take the type of their default.
    """
    out = dict(defaults)
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {ln}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"config line {ln}: unknown key {key!r}")
        default = defaults[key]
        try:
            if isinstance(default, bool):
                if value.lower() not in ("0", "1", "true", "false"):
                    raise ValueError(value)
                out[key] = value.lower() in ("1", "true")
            elif isinstance(default, int):
                out[key] = int(value)
            elif isinstance(default, float):
                out[key] = float(value)
            else:
                out[key] = value
        except ValueError as exc:
            raise ConfigError(f"config line {ln}: bad value for {key!r}: {value!r}") from exc
    return out


def config_to_text(cfg: dict) -> str:
    lines = []
    for k, v in cfg.items():
        if isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{k}={v}")
    return "\n".join(lines) + "\n"


def load_config(path, defaults: dict) -> dict:
    return parse_config_text(Path(path).read_text(), defaults)


# ---------------------------------------------------------------------------
# images and reports


def write_ppm(path, image: np.ndarray) -> None:
    """Binary PPM (P6), 8-bit RGB."""
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ConfigError(f"write_ppm wants (H, W, 3) uint8, got {image.shape} {image.dtype}")
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(image).tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P6":
        raise FormatError(f"{path}: not a binary PPM")
    w, h = (int(x) for x in parts[1].split())
    if parts[2] != b"255":
        raise FormatError(f"{path}: unsupported maxval {parts[2]!r}")
    data = parts[3]
    if len(data) != w * h * 3:
        raise FormatError(f"{path}: expected {w * h * 3} pixel bytes, got {len(data)}")
    return np.frombuffer(data, np.uint8).reshape(h, w, 3).copy()


def frames_to_strip(frames: np.ndarray) -> np.ndarray:
    """Horizontally concatenate (T, H, W, 3) frames into one (H, T*W, 3) image."""
    return np.concatenate(list(frames), axis=1)


def topdown_plot(
    positions: np.ndarray,
    target_xy: tuple[float, float],
    room: tuple[float, float],
    size: int = 256,
    obstacle: tuple[float, float, float] | None = None,
) -> np.ndarray:
    """Room-down view: start red, target green, visited positions blue."""
    img = np.full((size, size, 3), 255, np.uint8)
    img[[0, -1], :] = 40
    img[:, [0, -1]] = 40
    sx = (size - 1) / room[0]
    sy = (size - 1) / room[1]

    def put(x, y, color, r):
        cx = int(round(x * sx))
        cy = (size - 1) - int(round(y * sy))  # image rows grow downward
        y0, y1 = max(cy - r, 0), min(cy + r + 1, size)
        x0, x1 = max(cx - r, 0), min(cx + r + 1, size)
        img[y0:y1, x0:x1] = color

    if obstacle is not None:
        put(obstacle[0], obstacle[1], (160, 160, 160), max(int(obstacle[2] * sx), 2))
    for x, y in positions[1:]:
        put(x, y, (60, 90, 230), 1)
    put(positions[0][0], positions[0][1], (220, 40, 40), 3)
    put(target_xy[0], target_xy[1], (40, 180, 60), 3)
    return img


def write_csv(path, header: list[str], rows: list[list]) -> None:
    """Deterministic CSV: floats rendered with repr-stable %.6g formatting."""

    def fmt(v):
        if isinstance(v, float):
            return f"{v:.6g}"
        if isinstance(v, (np.floating,)):
            return f"{float(v):.6g}"
        return v

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
