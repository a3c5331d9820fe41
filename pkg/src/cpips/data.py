"""Image loading (binary PPM natively, PNG through Pillow), padding and manifests."""

import json
import math
import os
import re
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import torch

from .errors import ImageParseError, ManifestError

_PPM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


@dataclass
class ImageBuffer:
    """RGB image with samples in [0, 1], stored as an (H, W, 3) float array."""

    pixels: np.ndarray

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    def to_tensor(self, dtype=torch.float32):
        return torch.as_tensor(np.ascontiguousarray(self.pixels.transpose(2, 0, 1)), dtype=dtype)

    @classmethod
    def from_tensor(cls, t):
        arr = t.detach().cpu().double().clamp(0.0, 1.0).numpy()
        return cls(arr.transpose(1, 2, 0).copy())


def parse_ppm(data):
    """Decode a binary (P6) PPM with maxval <= 255."""
    pos = 0
    fields = []
    for _ in range(4):
        m = _PPM_TOKEN.match(data, pos)
        if m is None:
            raise ImageParseError("truncated PPM header", offset=len(data))
        fields.append((m.group(1), m.start(1)))
        pos = m.end(1)
    magic, off = fields[0]
    if magic != b"P6":
        raise ImageParseError("not a binary PPM (expected P6)", offset=off)
    values = []
    for tok, off in fields[1:]:
        if not tok.isdigit():
            raise ImageParseError(f"bad header field {tok[:16]!r}", offset=off)
        values.append(int(tok))
    width, height, maxval = values
    if width < 1 or height < 1:
        raise ImageParseError("image dimensions must be positive", offset=fields[1][1])
    if not 1 <= maxval <= 255:
        raise ImageParseError(f"unsupported maxval {maxval}", offset=fields[3][1])
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ImageParseError("missing whitespace after header", offset=pos)
    pos += 1
    need = width * height * 3
    if len(data) - pos < need:
        raise ImageParseError(f"raster truncated: need {need} bytes, have {len(data) - pos}",
                              offset=len(data))
    raster = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos)
    if raster.max(initial=0) > maxval:
        raise ImageParseError("sample exceeds maxval", offset=pos)
    return ImageBuffer(raster.reshape(height, width, 3).astype(np.float64) / maxval)


def load_image(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:2] == b"P6":
        return parse_ppm(data)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        try:
            from PIL import Image
        except ImportError:  # pragma: no cover
            raise ImageParseError("PNG input needs Pillow installed", offset=0) from None
        import io

        img = Image.open(io.BytesIO(data)).convert("RGB")
        return ImageBuffer(np.asarray(img, dtype=np.float64) / 255.0)
    raise ImageParseError("unrecognized image format (expected P6 PPM or PNG)", offset=0)


def to_bytes8(img):
    return np.round(np.clip(img.pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_ppm(img):
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + to_bytes8(img).tobytes()


def save_image(path, img):
    if isinstance(img, torch.Tensor):
        img = ImageBuffer.from_tensor(img)
    with open(path, "wb") as f:
        f.write(encode_ppm(img))


def padded_size(n, m=32):
    return int(math.ceil(n / m) * m)


def pad_to_multiple(img, m=32):
    """Replicate-pad right/bottom up to a multiple of ``m``.

    Accepts an ImageBuffer or a (3, H, W) tensor; returns ``(tensor, (H, W))``.
    """
    t = img.to_tensor() if isinstance(img, ImageBuffer) else img
    h, w = t.shape[-2:]
    ph, pw = padded_size(h, m) - h, padded_size(w, m) - w
    if ph or pw:
        t = torch.nn.functional.pad(t[None], (0, pw, 0, ph), mode="replicate")[0]
    return t, (h, w)


def crop(t, dims):
    h, w = dims
    return t[..., :h, :w]


# --- manifests ---------------------------------------------------------------


@dataclass
class JudgmentRecord:
    ref: object
    p0: object
    p1: object
    h: float
    subset: Optional[str] = None


@dataclass
class DatasetManifest:
    kind: str
    root: str
    records: List = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def resolve(self, p):
        return p if os.path.isabs(p) else os.path.join(self.root, p)


def load_manifest(path, kind, num_classes=None, check_files=True):
    """Read a JSON-lines manifest.

    classification lines: ``{"path": str, "label": int}``
    judgment lines: ``{"ref": str, "p0": str, "p1": str, "h": float, "subset": str?}``
    """
    if kind not in ("classification", "judgment"):
        raise ManifestError(f"unknown manifest kind {kind!r}")
    try:
        f = open(path, encoding="utf-8")
    except OSError as e:
        raise ManifestError(f"cannot open manifest: {e}") from None
    manifest = DatasetManifest(kind, os.path.dirname(os.path.abspath(path)))
    with f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"invalid JSON ({e.msg})", line=lineno) from None
            if not isinstance(obj, dict):
                raise ManifestError("record must be a JSON object", line=lineno)
            if kind == "classification":
                rec = _classification_record(obj, lineno, num_classes)
                paths = [rec[0]]
            else:
                rec = _judgment_record(obj, lineno)
                paths = [rec.ref, rec.p0, rec.p1]
            if check_files:
                for p in paths:
                    if not os.path.exists(manifest.resolve(p)):
                        raise ManifestError(f"missing file {p}", line=lineno)
            manifest.records.append(rec)
    return manifest


def _classification_record(obj, lineno, num_classes):
    path, label = obj.get("path"), obj.get("label")
    if not isinstance(path, str):
        raise ManifestError("'path' must be a string", line=lineno)
    if not isinstance(label, int) or isinstance(label, bool) or label < 0:
        raise ManifestError("'label' must be a non-negative integer", line=lineno)
    if num_classes is not None and label >= num_classes:
        raise ManifestError(f"label {label} >= num_classes {num_classes}", line=lineno)
    return path, label


def _judgment_record(obj, lineno):
    for key in ("ref", "p0", "p1"):
        if not isinstance(obj.get(key), str):
            raise ManifestError(f"{key!r} must be a string", line=lineno)
    h = obj.get("h")
    if not isinstance(h, (int, float)) or isinstance(h, bool) or not 0.0 <= h <= 1.0:
        raise ManifestError(f"'h' must be a number in [0, 1], got {h!r}", line=lineno)
    subset = obj.get("subset")
    if subset is not None and not isinstance(subset, str):
        raise ManifestError("'subset' must be a string", line=lineno)
    return JudgmentRecord(obj["ref"], obj["p0"], obj["p1"], float(h), subset)


def load_classification_tensors(manifest, size=None):
    """Stack a classification manifest into ``(images[N,3,H,W], labels[N])``."""
    images, labels = [], []
    for path, label in manifest.records:
        t, _ = pad_to_multiple(load_image(manifest.resolve(path)))
        if size is not None:
            t = t[..., :size, :size]
        images.append(t)
        labels.append(label)
    return torch.stack(images), torch.tensor(labels, dtype=torch.long)


def load_judgments(manifest):
    """Replace the paths of every judgment record with (3, H, W) tensors."""
    out = []
    for r in manifest.records:
        ref, p0, p1 = (load_image(manifest.resolve(p)).to_tensor() for p in (r.ref, r.p0, r.p1))
        if not ref.shape == p0.shape == p1.shape:
            raise ManifestError(f"patch sizes differ for {r.ref}")
        out.append(JudgmentRecord(ref, p0, p1, r.h, r.subset))
    return out


def convert_bapps(root, out_path):
    """Write a judgment manifest for a BAPPS-style 2AFC tree.

    Any directory under ``root`` holding ``ref/``, ``p0/``, ``p1/`` and ``judge/``
    becomes a subset named by its relative path; ``judge/<stem>.npy`` stores h.
    Paths in the manifest are relative to the manifest's directory.
    """
    root = os.path.abspath(root)
    base = os.path.dirname(os.path.abspath(out_path))
    count = 0
    with open(out_path, "w", encoding="utf-8") as out:
        for dirpath, dirnames, _ in sorted(os.walk(root)):
            dirnames.sort()
            if not {"ref", "p0", "p1", "judge"} <= set(dirnames):
                continue
            subset = os.path.relpath(dirpath, root).replace(os.sep, "/")
            for name in sorted(os.listdir(os.path.join(dirpath, "ref"))):
                stem = os.path.splitext(name)[0]
                judge = os.path.join(dirpath, "judge", stem + ".npy")
                if not os.path.exists(judge):
                    raise ManifestError(f"no judgment for {subset}/{stem}")
                h = float(np.asarray(np.load(judge)).reshape(-1)[0])
                rec = {k: os.path.relpath(os.path.join(dirpath, k, name), base).replace(os.sep, "/")
                       for k in ("ref", "p0", "p1")}
                rec.update(h=h, subset=subset)
                out.write(json.dumps(rec) + "\n")
                count += 1
    return count
