"""Bit-exact model and perturbation files, plus perturbation rendering.

Both container formats share one skeleton, little-endian throughout:

``FFM1`` (models)::

    magic "FFM1" | version u16 | descriptor_len u32 | descriptor JSON
    | payload (float32 tensors in manifest order) | FNV-1a 64 trailer u64

``FFP1`` (perturbations)::

    magic "FFP1" | version u16 | metadata_len u32 | metadata JSON
    | C,H,W as 3x u32 | payload (C*H*W float32) | FNV-1a 64 trailer u64

The trailer digests every preceding byte, so any flipped bit or truncation
is caught on load.  JSON blocks are serialized canonically (sorted keys,
compact separators) so a value has exactly one byte image; digests double
as content identities.  Tensors are stored in 32-bit and widened to 64-bit
on load.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .nn import LayerSpec, Model, NetworkSpec, expected_weight_shapes
from .tensorops import linf_norm

__all__ = [
    "Perturbation",
    "fnv1a64",
    "model_bytes",
    "model_digest",
    "save_model",
    "load_model",
    "perturbation_bytes",
    "save_perturbation",
    "load_perturbation",
    "render_perturbation",
]

MODEL_MAGIC = b"FFM1"
PERT_MAGIC = b"FFP1"
FORMAT_VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a over a byte string."""
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def _canon_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.what}: truncated file "
                              f"(needed {n} bytes at offset {self.pos})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def done(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(f"{self.what}: {len(self.data) - self.pos} "
                              "trailing bytes after payload")


def _check_container(data: bytes, magic: bytes, what: str) -> bytes:
    """Verify magic, version and trailer digest; return the body bytes."""
    if len(data) < len(magic) + 2 + 4 + 8:
        raise FormatError(f"{what}: truncated file ({len(data)} bytes)")
    if data[:4] != magic:
        raise FormatError(f"{what}: bad magic {data[:4]!r}, expected {magic!r}")
    version = struct.unpack("<H", data[4:6])[0]
    if version != FORMAT_VERSION:
        raise FormatError(f"{what}: unsupported format version {version}")
    stored = struct.unpack("<Q", data[-8:])[0]
    actual = fnv1a64(data[:-8])
    if stored != actual:
        raise FormatError(f"{what}: digest mismatch "
                          f"(stored {stored:016x}, computed {actual:016x})")
    return data[:-8]


def _spec_to_json(spec: NetworkSpec) -> dict:
    return {
        "input_shape": list(spec.input_shape),
        "class_count": spec.class_count,
        "layers": [
            {"id": l.id, "kind": l.kind, "inputs": list(l.inputs),
             "params": l.params}
            for l in spec.layers
        ],
    }


def _spec_from_json(obj: dict) -> NetworkSpec:
    try:
        layers = [
            LayerSpec(str(l["id"]), str(l["kind"]),
                      tuple(str(p) for p in l["inputs"]), dict(l["params"]))
            for l in obj["layers"]
        ]
        return NetworkSpec(layers, obj["input_shape"], obj["class_count"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"model descriptor invalid: {exc}") from exc


def _manifest(model: Model) -> list[tuple[str, str, tuple[int, ...]]]:
    out = []
    for l in model.spec.layers:
        roles = model.weights.get(l.id)
        if roles:
            for role in sorted(roles):
                out.append((l.id, role, tuple(roles[role].shape)))
    return out


def model_bytes(model: Model) -> bytes:
    """Canonical FFM1 byte image of a model, trailer included."""
    manifest = _manifest(model)
    descriptor = _canon_json({
        "spec": _spec_to_json(model.spec),
        "manifest": [[lid, role, list(shape)] for lid, role, shape in manifest],
    })
    payload = b"".join(
        np.ascontiguousarray(model.weights[lid][role], dtype="<f4").tobytes()
        for lid, role, _ in manifest
    )
    body = MODEL_MAGIC + struct.pack("<H", FORMAT_VERSION) \
        + struct.pack("<I", len(descriptor)) + descriptor + payload
    return body + struct.pack("<Q", fnv1a64(body))


def model_digest(model: Model) -> int:
    """Content identity: the FNV-1a trailer of the canonical byte image."""
    img = model_bytes(model)
    return struct.unpack("<Q", img[-8:])[0]


def save_model(model: Model, path) -> None:
    with open(path, "wb") as f:
        f.write(model_bytes(model))


def load_model(path) -> Model:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise FormatError(f"cannot read model file {path}: {exc}") from exc
    body = _check_container(data, MODEL_MAGIC, f"model file {path}")
    r = _Reader(body, f"model file {path}")
    r.take(6)  # magic + version, already verified
    desc_len = r.u32()
    try:
        descriptor = json.loads(r.take(desc_len).decode("utf-8"))
        spec = _spec_from_json(descriptor["spec"])
        manifest = [(str(lid), str(role), tuple(int(s) for s in shape))
                    for lid, role, shape in descriptor["manifest"]]
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"model file {path}: bad descriptor: {exc}") from exc
    expected = expected_weight_shapes(spec)
    want = sorted((lid, role) for lid, roles in expected.items() for role in roles)
    if sorted((lid, role) for lid, role, _ in manifest) != want:
        raise FormatError(f"model file {path}: manifest does not cover the "
                          "spec's weight tensors")
    weights: dict[str, dict[str, np.ndarray]] = {}
    for lid, role, shape in manifest:
        if tuple(expected[lid][role]) != shape:
            raise FormatError(f"model file {path}: tensor {lid}/{role} shape "
                              f"{shape} != spec-implied {expected[lid][role]}")
        count = int(np.prod(shape))
        raw = r.take(4 * count)
        weights.setdefault(lid, {})[role] = np.frombuffer(
            raw, dtype="<f4").astype(np.float64).reshape(shape)
    r.done()
    try:
        return Model(spec=spec, weights=weights)
    except ValueError as exc:
        raise FormatError(f"model file {path}: {exc}") from exc


@dataclass
class Perturbation:
    """A universal perturbation image with its budget and provenance.

    ``data`` is (C, H, W) float64 with max |value| <= ``xi``.  ``metadata``
    carries method ("fff" | "uap-desk" | "random"), seed, iterations run,
    loss at save, target model digest (16 hex chars) and crafting seconds.
    """

    data: np.ndarray
    xi: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValueError(f"perturbation must be (C,H,W), got {self.data.shape}")
        if not self.xi > 0:
            raise ValueError("xi must be positive")
        if not np.isfinite(self.data).all():
            raise ValueError("perturbation contains non-finite values")
        if linf_norm(self.data) > self.xi:
            raise ValueError(
                f"perturbation exceeds its l-infinity budget: "
                f"{linf_norm(self.data)} > {self.xi}")


def _f32_within_budget(data: np.ndarray, xi: float) -> np.ndarray:
    """Round to float32 without letting the rounding grow past the budget."""
    out = data.astype("<f4")
    bound = np.float32(xi)
    if float(bound) > xi:
        bound = np.nextafter(bound, np.float32(0))
    return np.clip(out, -bound, bound)


def perturbation_bytes(p: Perturbation) -> bytes:
    meta = dict(p.metadata)
    meta["xi"] = float(p.xi)
    metadata = _canon_json(meta)
    c, h, w = p.data.shape
    payload = np.ascontiguousarray(_f32_within_budget(p.data, p.xi)).tobytes()
    body = PERT_MAGIC + struct.pack("<H", FORMAT_VERSION) \
        + struct.pack("<I", len(metadata)) + metadata \
        + struct.pack("<III", c, h, w) + payload
    return body + struct.pack("<Q", fnv1a64(body))


def save_perturbation(p: Perturbation, path) -> None:
    with open(path, "wb") as f:
        f.write(perturbation_bytes(p))


def load_perturbation(path) -> Perturbation:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise FormatError(f"cannot read perturbation file {path}: {exc}") from exc
    what = f"perturbation file {path}"
    body = _check_container(data, PERT_MAGIC, what)
    r = _Reader(body, what)
    r.take(6)
    meta_len = r.u32()
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
        xi = float(meta.pop("xi"))
    except (KeyError, TypeError, ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"{what}: bad metadata: {exc}") from exc
    c, h, w = struct.unpack("<III", r.take(12))
    if min(c, h, w) < 1:
        raise FormatError(f"{what}: non-positive shape ({c},{h},{w})")
    raw = r.take(4 * c * h * w)
    r.done()
    payload = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(c, h, w)
    if not np.isfinite(payload).all():
        raise FormatError(f"{what}: payload contains non-finite values")
    if not xi > 0:
        raise FormatError(f"{what}: non-positive xi {xi}")
    if linf_norm(payload) > xi:
        raise FormatError(f"{what}: payload max |value| {linf_norm(payload)} "
                          f"exceeds recorded xi {xi}")
    return Perturbation(data=payload, xi=xi, metadata=meta)


def render_perturbation(p: Perturbation, path) -> None:
    """Write the perturbation as a PNG.

    Values map affinely from [-xi, +xi] to [0, 255] with round-half-away-
    from-zero, identically in every channel, so 0 lands on 128 and the
    budget endpoints on 0 and 255.
    """
    from PIL import Image

    c = p.data.shape[0]
    if c not in (1, 3):
        raise ValueError(f"cannot render {c}-channel perturbation (need 1 or 3)")
    scaled = (p.data + p.xi) * (255.0 / (2.0 * p.xi))
    # arguments are >= 0 here, so floor(x + 0.5) rounds half away from zero
    pixels = np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)
    if c == 1:
        img = Image.fromarray(pixels[0], mode="L")
    else:
        img = Image.fromarray(pixels.transpose(1, 2, 0), mode="RGB")
    img.save(path, format="PNG")
