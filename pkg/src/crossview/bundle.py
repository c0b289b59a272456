"""On-disk dataset bundles, run-config files, and atomic writes.

A bundle directory holds::

    manifest.toml   key = value lines binding the pieces, plus generator settings
    clinical.csv    id, twelve feature columns, label (normal/abnormal)
    images.bin      "MMGF", u16 version, u32 N, H, W, then N*H*W float32, all little-endian
    embeddings.csv  id + latent columns; used instead of images.bin when present
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .data import CLASS_NAMES, CLINICAL_COLUMNS, MultimodalDataset
from .train import TrainConfig

MAGIC = b"MMGF"
VERSION = 1
_HEADER = struct.Struct("<4sHIII")


class BundleError(ValueError):
    pass


class ConfigFileError(ValueError):
    def __init__(self, path, line: int, key: str, msg: str):
        super().__init__(f"{path}:{line}: {key}: {msg}")
        self.line = line
        self.key = key


# ---------------------------------------------------------------- writing

def atomic_write_bytes(path: str | os.PathLike, payload: bytes) -> None:
    """Write to a temp file in the target directory, then rename over the target."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def fmt(x: float) -> str:
    """Round-trippable, locale-independent float text."""
    return repr(float(x))


def csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def encode_images(images: np.ndarray) -> bytes:
    imgs = np.asarray(images)
    if imgs.ndim != 4 or imgs.shape[1] != 1:
        raise BundleError(f"images must be N x 1 x H x W, got {imgs.shape}")
    n, _, h, w = imgs.shape
    return _HEADER.pack(MAGIC, VERSION, n, h, w) + imgs.astype("<f4").tobytes()


def decode_images(payload: bytes, path="images.bin") -> np.ndarray:
    if len(payload) < _HEADER.size:
        raise BundleError(f"{path}: truncated header")
    magic, version, n, h, w = _HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise BundleError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise BundleError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 4 * n * h * w
    if len(payload) != expected:
        raise BundleError(f"{path}: expected {expected} bytes for {n}x{h}x{w}, found {len(payload)}")
    arr = np.frombuffer(payload, dtype="<f4", offset=_HEADER.size).astype(np.float32)
    return arr.reshape(n, 1, h, w)


def _kv_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt(v)
    return json.dumps(str(v))


def write_bundle(data: MultimodalDataset, out_dir, meta: dict | None = None) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise BundleError(f"cannot create {out}: {e}") from e
    labels = [CLASS_NAMES[c] for c in data.class_index]
    rows = ([pid, *map(fmt, feat), lab] for pid, feat, lab in zip(data.ids, data.clinical, labels))
    atomic_write_text(out / "clinical.csv", csv_text(["id", *data.clinical_columns, "label"], rows))
    manifest = {"format": "mmgf-bundle", "version": VERSION, "n": data.n, "clinical": "clinical.csv"}
    if data.images is not None:
        atomic_write_bytes(out / "images.bin", encode_images(data.images))
        manifest["images"] = "images.bin"
    if data.embeddings is not None:
        emb = np.asarray(data.embeddings)
        header = ["id", *(f"e{j}" for j in range(emb.shape[1]))]
        atomic_write_text(out / "embeddings.csv", csv_text(header, ([pid, *map(fmt, r)] for pid, r in zip(data.ids, emb))))
        manifest["embeddings"] = "embeddings.csv"
    manifest.update(meta or {})
    text = "".join(f"{k} = {_kv_value(v)}\n" for k, v in manifest.items())
    atomic_write_text(out / "manifest.toml", text)
    return out


# ---------------------------------------------------------------- reading

def parse_kv(text: str, path="<config>") -> list[tuple[int, str, str]]:
    """Lines of ``key = value`` (``#`` comments, blank lines ignored) as (line, key, raw value)."""
    out = []
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigFileError(path, lineno, line, "expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if value.startswith('"'):
            try:
                _, end = json.JSONDecoder().raw_decode(value)
            except json.JSONDecodeError:
                raise ConfigFileError(path, lineno, key, "unterminated string") from None
            rest = value[end:].strip()
            if rest and not rest.startswith("#"):
                raise ConfigFileError(path, lineno, key, f"unexpected text after string: {rest!r}")
            value = value[:end]
        else:
            value = value.split("#", 1)[0].strip()
        if not key:
            raise ConfigFileError(path, lineno, "<empty>", "missing key")
        if key in seen:
            raise ConfigFileError(path, lineno, key, f"duplicate key (first on line {seen[key]})")
        seen[key] = lineno
        out.append((lineno, key, value))
    return out


def _unquote(v: str) -> str:
    if len(v) >= 2 and v[0] == v[-1] == '"':
        return json.loads(v)
    return v


def coerce(value: str, typ: type):
    v = _unquote(value)
    if typ is bool:
        low = v.lower()
        if low in ("true", "on", "yes", "1"):
            return True
        if low in ("false", "off", "no", "0"):
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    if typ is int:
        return int(v)
    if typ is float:
        f = float(v)
        if not np.isfinite(f):
            raise ValueError(f"expected a finite number, got {value!r}")
        return f
    return v


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise BundleError(f"cannot read {path}: {e}") from e
    out = {}
    for _, key, value in parse_kv(text, path):
        if value.startswith('"'):
            out[key] = _unquote(value)
        elif value in ("true", "false"):
            out[key] = value == "true"
        else:
            try:
                out[key] = int(value)
            except ValueError:
                out[key] = float(value)
    return out


def read_bundle(bundle_dir) -> MultimodalDataset:
    root = Path(bundle_dir)
    man = read_manifest(root / "manifest.toml")
    if man.get("format") != "mmgf-bundle":
        raise BundleError(f"{root}/manifest.toml: not a dataset bundle")
    clin_path = root / str(man.get("clinical", "clinical.csv"))
    try:
        with open(clin_path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise BundleError(f"cannot read {clin_path}: {e}") from e
    if not rows or rows[0][0] != "id" or rows[0][-1] != "label":
        raise BundleError(f"{clin_path}: header must start with 'id' and end with 'label'")
    columns = tuple(rows[0][1:-1])
    body = rows[1:]
    n = len(body)
    if "n" in man and man["n"] != n:
        raise BundleError(f"{clin_path}: manifest says n={man['n']} but file has {n} rows")
    ids, feats, labels = [], [], []
    for i, r in enumerate(body, start=2):
        if len(r) != len(columns) + 2:
            raise BundleError(f"{clin_path}:{i}: expected {len(columns) + 2} fields, got {len(r)}")
        if r[-1] not in CLASS_NAMES:
            raise BundleError(f"{clin_path}:{i}: label must be one of {CLASS_NAMES}, got {r[-1]!r}")
        ids.append(r[0])
        try:
            feats.append([float(x) for x in r[1:-1]])
        except ValueError as e:
            raise BundleError(f"{clin_path}:{i}: {e}") from e
        labels.append(CLASS_NAMES.index(r[-1]))
    images = embeddings = None
    if "images" in man:
        p = root / str(man["images"])
        try:
            images = decode_images(p.read_bytes(), p)
        except OSError as e:
            raise BundleError(f"cannot read {p}: {e}") from e
        if images.shape[0] != n:
            raise BundleError(f"{p}: holds {images.shape[0]} images, clinical.csv has {n} rows")
    if "embeddings" in man:
        p = root / str(man["embeddings"])
        try:
            with open(p, newline="", encoding="utf-8") as fh:
                erows = list(csv.reader(fh))[1:]
        except OSError as e:
            raise BundleError(f"cannot read {p}: {e}") from e
        if [r[0] for r in erows] != ids:
            raise BundleError(f"{p}: ids do not match clinical.csv")
        embeddings = np.array([[float(x) for x in r[1:]] for r in erows])
    return MultimodalDataset(
        clinical=np.array(feats, dtype=np.float64).reshape(n, len(columns)),
        labels=np.eye(len(CLASS_NAMES))[labels],
        ids=ids,
        images=images,
        embeddings=embeddings,
        clinical_columns=columns,
    )


def parse_run_config(text: str, path="<config>", base: TrainConfig | None = None) -> TrainConfig:
    """Build a TrainConfig from ``key = value`` lines; unknown keys are rejected."""
    types = TrainConfig.field_types()
    values = {} if base is None else base.to_dict()
    for lineno, key, raw in parse_kv(text, path):
        if key not in types:
            raise ConfigFileError(path, lineno, key, "unknown key")
        try:
            v = coerce(raw, types[key])
            # validate this key on its own so the error can name its line
            TrainConfig(**{key: v})
        except ValueError as e:
            raise ConfigFileError(path, lineno, key, str(e)) from e
        values[key] = v
    return TrainConfig(**values)


def load_run_config(path, base: TrainConfig | None = None) -> TrainConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigFileError(path, 0, "<file>", str(e)) from e
    return parse_run_config(text, path, base)


def format_run_config(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {_kv_value(v)}\n" for k, v in cfg.to_dict().items())
