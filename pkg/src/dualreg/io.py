"""File formats: MetaImage volumes, ``section.key = value`` configs, landmark
CSV files and the fusion-kernel text format."""

from __future__ import annotations

import csv
from dataclasses import fields
from pathlib import Path
from typing import Union

import numpy as np

from .losses import SsimParams, TranslationLossWeights
from .metrics import LandmarkSet
from .mind import MindParams, MindVolume
from .phantom import DEFAULT_ORGANS, PhantomSpec, faithful_translator
from .registration import FusionKernel, RegistrationConfig
from .translator import ArtifactInjector, Blob, GammaRemapTranslator, IdentityTranslator, Translator
from .volume import BinaryMask, DisplacementField, Volume3


class FormatError(ValueError):
    """Malformed or unsupported file content."""


class ConfigError(ValueError):
    """Invalid configuration file."""


# ---------------------------------------------------------------- MetaImage

_ELEMENT_TYPES = {"MET_DOUBLE": "<f8", "MET_FLOAT": "<f4", "MET_UCHAR": "u1"}
_CHANNELS = {1: "scalar", 3: "field", 6: "mind"}

Image = Union[Volume3, DisplacementField, BinaryMask, MindVolume]


def write_volume(path, obj: Image) -> None:
    """Write a volume, field, mask or descriptor as a single ``.mha`` file."""
    if isinstance(obj, BinaryMask):
        etype, payload = "MET_UCHAR", obj.data.astype(np.uint8)[..., None]
    else:
        etype, payload = "MET_DOUBLE", obj.data.astype("<f8")
        if payload.ndim == 3:
            payload = payload[..., None]
    nx, ny, nz, nc = payload.shape
    header = [
        "ObjectType = Image",
        "NDims = 3",
        "BinaryData = True",
        "ElementByteOrderMSB = False",
        "CompressedData = False",
        "ElementSpacing = " + " ".join(repr(float(s)) for s in obj.spacing),
        f"DimSize = {nx} {ny} {nz}",
        f"ElementNumberOfChannels = {nc}",
        f"ElementType = {etype}",
        "ElementDataFile = LOCAL",
    ]
    # x fastest, channels interleaved per voxel
    raw = np.ascontiguousarray(payload.transpose(2, 1, 0, 3)).tobytes()
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(raw)


def _parse_header(blob: bytes):
    header, pos = {}, 0
    while True:
        end = blob.find(b"\n", pos)
        if end < 0:
            raise FormatError("ElementDataFile: header ended without 'ElementDataFile = LOCAL'")
        line = blob[pos:end].decode("ascii", errors="replace").strip()
        pos = end + 1
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"header line {line!r}: expected 'Key = Value'")
        key, value = (s.strip() for s in line.split("=", 1))
        header[key] = value
        if key == "ElementDataFile":
            if value != "LOCAL":
                raise FormatError(f"ElementDataFile: only LOCAL is supported, got {value!r}")
            return header, pos


def _ints(header, key, count=None):
    try:
        vals = [int(v) for v in header[key].split()]
    except KeyError:
        raise FormatError(f"{key}: missing from header") from None
    except ValueError:
        raise FormatError(f"{key}: not a list of integers: {header[key]!r}") from None
    if count is not None and len(vals) != count:
        raise FormatError(f"{key}: expected {count} values, got {len(vals)}")
    return vals


def read_volume(path) -> Image:
    """Read an ``.mha`` file; the channel count selects the returned type.

    One channel gives a :class:`Volume3` (or :class:`BinaryMask` for
    ``MET_UCHAR``), three a :class:`DisplacementField`, six a
    :class:`MindVolume`.
    """
    blob = Path(path).read_bytes()
    header, offset = _parse_header(blob)
    (ndims,) = _ints(header, "NDims", 1)
    if ndims != 3:
        raise FormatError(f"NDims: only 3 is supported, got {ndims}")
    dims = _ints(header, "DimSize", 3)
    if min(dims) < 1:
        raise FormatError(f"DimSize: sizes must be positive, got {dims}")
    nc = _ints(header, "ElementNumberOfChannels", 1)[0] if "ElementNumberOfChannels" in header else 1
    if nc not in _CHANNELS:
        raise FormatError(f"ElementNumberOfChannels: unsupported channel count {nc} (expected 1, 3 or 6)")
    etype = header.get("ElementType")
    if etype not in _ELEMENT_TYPES:
        raise FormatError(f"ElementType: unsupported element type {etype!r}")
    msb = header.get("ElementByteOrderMSB", header.get("BinaryDataByteOrderMSB", "False"))
    if msb.lower() not in ("false", "0"):
        raise FormatError(f"ElementByteOrderMSB: big-endian payloads are not supported ({msb})")
    if header.get("CompressedData", "False").lower() not in ("false", "0"):
        raise FormatError("CompressedData: compressed payloads are not supported")
    spacing = [1.0, 1.0, 1.0]
    if "ElementSpacing" in header:
        try:
            spacing = [float(v) for v in header["ElementSpacing"].split()]
        except ValueError:
            raise FormatError(f"ElementSpacing: not numeric: {header['ElementSpacing']!r}") from None
        if len(spacing) != 3:
            raise FormatError(f"ElementSpacing: expected 3 values, got {len(spacing)}")
    dtype = np.dtype(_ELEMENT_TYPES[etype])
    nx, ny, nz = dims
    expected = nx * ny * nz * nc * dtype.itemsize
    if len(blob) - offset != expected:
        raise FormatError(f"DimSize: header declares {expected} payload bytes, file has {len(blob) - offset}")
    arr = np.frombuffer(blob, dtype=dtype, offset=offset).reshape(nz, ny, nx, nc).transpose(2, 1, 0, 3)
    try:
        if nc == 1 and etype == "MET_UCHAR":
            return BinaryMask(arr[..., 0] != 0, spacing)
        if nc == 1:
            return Volume3(arr[..., 0].astype(np.float64), spacing)
        if nc == 3:
            return DisplacementField(arr.astype(np.float64), spacing)
        return MindVolume(arr.astype(np.float64), spacing)
    except ValueError as exc:
        raise FormatError(f"payload: {exc}") from None


# ---------------------------------------------------------------- config files

def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _triple(text: str) -> tuple[float, float, float]:
    vals = _floats(text)
    if len(vals) == 1:
        vals = vals * 3
    if len(vals) != 3:
        raise ValueError(f"expected 1 or 3 numbers, got {text!r}")
    return tuple(vals)


def _bool_int(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


_REGISTRATION_KEYS = {
    "lambda_smooth": float, "similarity": str, "alpha_o": float, "alpha_s": float, "levels": _bool_int,
    "iterations": lambda t: tuple(_bool_int(v) for v in t.replace(",", " ").split()),
    "step_field": float, "step_kernel": float, "beta1": float, "beta2": float, "adam_eps": float, "seed": _bool_int,
}
_MIND_KEYS = {"radius": _bool_int, "sigma": float, "eps": float}
_SSIM_KEYS = {"radius": _bool_int, "c1": float, "c2": float}
_TRANSLATOR_KEYS = {"kind": str, "gamma": float, "table": str, "blobs": str, "seed": _bool_int}
_PHANTOM_KEYS = {
    "dims": lambda t: tuple(int(v) for v in _triple(t)), "spacing": _triple, "noise_ct": float, "noise_mr": float,
    "max_disp": float, "smooth_sigma": float, "n_landmarks": _bool_int, "primary": str, "seed": _bool_int,
}
_WEIGHT_KEYS = {"cyc": float, "identity": float, "mind": float}

SCHEMA = {
    "registration": _REGISTRATION_KEYS,
    "mind": _MIND_KEYS,
    "ssim": _SSIM_KEYS,
    "translator": _TRANSLATOR_KEYS,
    "backward": _TRANSLATOR_KEYS,
    "phantom": _PHANTOM_KEYS,
    "weights": _WEIGHT_KEYS,
}


def parse_config(text: str, source: str = "<config>") -> dict:
    """Parse ``section.key = value`` lines into ``{section: {key: value}}``.

    ``#`` starts a comment. Unknown sections or keys, duplicates and values
    that do not parse are errors naming the offending line.
    """
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'section.key = value'")
        name, value = (s.strip() for s in line.split("=", 1))
        if "." not in name:
            raise ConfigError(f"{where}: key {name!r} has no section")
        section, key = name.split(".", 1)
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"{where}: unknown key {name!r}")
        if key in out.get(section, {}):
            raise ConfigError(f"{where}: duplicate key {name!r}")
        try:
            parsed = SCHEMA[section][key](value)
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for {name!r}: {exc}") from None
        out.setdefault(section, {})[key] = parsed
    return out


def load_config(path) -> dict:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def _build(cls, section: str, values: dict, **extra):
    try:
        return cls(**values, **extra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def registration_config(cfg: dict) -> RegistrationConfig:
    return _build(
        RegistrationConfig, "registration", cfg.get("registration", {}),
        mind=_build(MindParams, "mind", cfg.get("mind", {})),
        ssim=_build(SsimParams, "ssim", cfg.get("ssim", {})),
    )


def mind_params(cfg: dict) -> MindParams:
    return _build(MindParams, "mind", cfg.get("mind", {}))


def translation_weights(cfg: dict) -> TranslationLossWeights:
    return _build(TranslationLossWeights, "weights", cfg.get("weights", {}))


def phantom_spec(cfg: dict) -> PhantomSpec:
    return _build(PhantomSpec, "phantom", cfg.get("phantom", {}))


def _parse_table(text: str):
    pairs = []
    for item in text.split(","):
        if item.strip():
            x, y = item.split(":")
            pairs.append((float(x), float(y)))
    return tuple(pairs)


def _parse_blobs(text: str):
    """Either a count of seeded random blobs or ``x y z radius amplitude sign; ...``."""
    text = text.strip()
    if not text:
        return (), 0
    if ";" not in text and len(text.split()) == 1:
        return (), _bool_int(text)
    blobs = []
    for item in text.split(";"):
        if item.strip():
            x, y, z, r, a, s = _floats(item)
            blobs.append(Blob((x, y, z), r, a, int(s)))
    return tuple(blobs), 0


def translator_from(cfg: dict, section: str = "translator") -> Translator:
    """Translator described by ``section.*`` keys (identity when absent).

    ``kind`` is ``identity``, ``gamma`` or ``phantom`` (the organ-level remap
    of the default phantom). A non-empty ``blobs`` wraps the result in an
    :class:`ArtifactInjector` seeded by ``seed``.
    """
    values = cfg.get(section, {})
    kind = values.get("kind", "identity")
    try:
        if kind == "identity":
            base: Translator = IdentityTranslator()
        elif kind == "gamma":
            table = _parse_table(values["table"]) if "table" in values else None
            base = GammaRemapTranslator(values.get("gamma", 1.0), table)
        elif kind == "phantom":
            base = faithful_translator(PhantomSpec(organs=DEFAULT_ORGANS))
        else:
            raise ValueError(f"unknown kind {kind!r} (identity, gamma, phantom)")
        blobs, n_random = _parse_blobs(values.get("blobs", ""))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None
    if blobs or n_random:
        return ArtifactInjector(base, blobs, seed=values.get("seed", 0), n_random=n_random)
    return base


def format_phantom_spec(spec: PhantomSpec) -> str:
    lines = ["# phantom specification"]
    for f in fields(spec):
        if f.name == "organs":
            continue
        value = getattr(spec, f.name)
        if isinstance(value, tuple):
            value = " ".join(repr(v) for v in value)
        lines.append(f"phantom.{f.name} = {value}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- landmarks

def write_landmarks(path, lm: LandmarkSet) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "x", "y", "z"])
        for label, p in zip(lm.labels, lm.points):
            w.writerow([label] + [repr(float(v)) for v in p])


def read_landmarks(path) -> LandmarkSet:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or [c.strip() for c in rows[0]] != ["label", "x", "y", "z"]:
        raise FormatError(f"{path}: first line must be the header 'label,x,y,z'")
    labels, pts = [], []
    for lineno, row in enumerate(rows[1:], 2):
        if len(row) != 4:
            raise FormatError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
        try:
            pts.append([float(v) for v in row[1:]])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-numeric coordinate") from None
        labels.append(row[0].strip())
    try:
        return LandmarkSet(labels, np.array(pts).reshape(-1, 3))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


# ---------------------------------------------------------------- fusion kernel

def format_kernel(kernel: FusionKernel) -> str:
    """One tap per line ``dz dy dx cin cout value``, then ``bias cout value``."""
    lines = []
    for dz in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                for ci in range(6):
                    for co in range(3):
                        lines.append(f"{dz} {dy} {dx} {ci} {co} {float(kernel.weights[dx + 1, dy + 1, dz + 1, ci, co])!r}")
    lines.extend(f"bias {co} {float(kernel.bias[co])!r}" for co in range(3))
    return "\n".join(lines) + "\n"


def parse_kernel(text: str) -> FusionKernel:
    w = np.zeros((3, 3, 3, 6, 3))
    b = np.zeros(3)
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        try:
            if parts[0] == "bias":
                b[int(parts[1])] = float(parts[2])
            else:
                dz, dy, dx, ci, co = (int(v) for v in parts[:5])
                w[dx + 1, dy + 1, dz + 1, ci, co] = float(parts[5])
        except (ValueError, IndexError):
            raise FormatError(f"kernel line {lineno}: cannot parse {line!r}") from None
    return FusionKernel(w, b)
