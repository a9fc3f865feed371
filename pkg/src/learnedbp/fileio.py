"""On-disk formats: tensors, figure exports, configs, datasets.

Tensors travel in a small binary container ("PATB"): a 4-byte magic,
version, rank and dimensions as unsigned 32-bit little-endian integers,
then the row-major float32 payload.  Figure exports are 16-bit binary
PGM with the min-max normalization written to a sidecar text file so
pixel values stay convertible back to physical units.  Scenarios and
datasets are plain-text key=value files next to the sample tensors.

All writes go through a temp-file-plus-rename so a crash never leaves a
half-written file under the final name.
"""

from __future__ import annotations

import math
import os
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ShapeMismatchError
from .forward import SensorData
from .geometry import (
    DetectorArray,
    ImageGrid,
    Scenario,
    TimeGrid,
    make_detectors,
)
from .phantoms import Image

PATB_MAGIC = b"PATB"
PATB_VERSION = 1
PGM_MAXVAL = 65535


def atomic_write_bytes(path, payload: bytes):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def write_patb(path, values: np.ndarray):
    """Serialize a 2-d or 3-d float array; the payload is float32."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.ndim not in (2, 3):
        raise ShapeMismatchError(f"tensor files hold 2-d or 3-d arrays, got ndim={values.ndim}")
    if any(dim < 1 for dim in values.shape):
        raise ShapeMismatchError(f"all dims must be at least 1, got {values.shape}")
    header = PATB_MAGIC + struct.pack(
        f"<II{values.ndim}I", PATB_VERSION, values.ndim, *values.shape
    )
    atomic_write_bytes(path, header + values.astype("<f4").tobytes())


def read_patb(path) -> np.ndarray:
    """Read a tensor file back as float64 (exact image of the stored float32)."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != PATB_MAGIC:
        raise FormatError(f"{path}: not a tensor file (bad magic)")
    version, ndim = struct.unpack_from("<II", raw, 4)
    if version != PATB_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if ndim not in (2, 3):
        raise FormatError(f"{path}: rank {ndim} out of range")
    if len(raw) < 12 + 4 * ndim:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{ndim}I", raw, 12)
    if any(dim < 1 for dim in dims):
        raise FormatError(f"{path}: zero dimension in header")
    count = int(np.prod(dims, dtype=np.int64))
    offset = 12 + 4 * ndim
    if len(raw) != offset + 4 * count:
        raise FormatError(
            f"{path}: payload is {len(raw) - offset} bytes, header promises {4 * count}"
        )
    flat = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
    return flat.astype(np.float64).reshape(dims)


def write_pgm(path, values: np.ndarray):
    """Export a 2-d array as binary 16-bit PGM plus a normalization sidecar.

    Pixels are the affine min-max rescaling of the values to 0..65535;
    the sidecar (same name + ".txt") records vmin and vmax so
    :func:`read_pgm` can undo the normalization up to quantization.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ShapeMismatchError(f"PGM export needs a 2-d array, got ndim={values.ndim}")
    if not np.all(np.isfinite(values)):
        raise ShapeMismatchError("PGM export needs finite values")
    vmin = float(values.min())
    vmax = float(values.max())
    if vmax > vmin:
        scaled = (values - vmin) * (PGM_MAXVAL / (vmax - vmin))
    else:
        scaled = np.zeros_like(values)
    pixels = np.rint(scaled).astype("<u4").clip(0, PGM_MAXVAL).astype(">u2")
    rows, cols = values.shape
    header = f"P5\n{cols} {rows}\n{PGM_MAXVAL}\n".encode("ascii")
    atomic_write_bytes(path, header + pixels.tobytes())
    sidecar = f"vmin={vmin!r}\nvmax={vmax!r}\n".encode("ascii")
    atomic_write_bytes(str(path) + ".txt", sidecar)


def read_pgm(path) -> np.ndarray:
    """Read a 16-bit binary PGM written by :func:`write_pgm` and map the
    pixels back to physical values via the sidecar."""
    raw = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        if pos >= len(raw):
            raise FormatError(f"{path}: truncated PGM header")
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        if raw[pos : pos + 1].isspace():
            pos += 1
            continue
        end = pos
        while end < len(raw) and not raw[end : end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    cols, rows, maxval = (int(f) for f in fields[1:])
    if maxval != PGM_MAXVAL:
        raise FormatError(f"{path}: expected 16-bit data, maxval is {maxval}")
    pixels = np.frombuffer(raw, dtype=">u2", count=rows * cols, offset=pos)
    meta = dict(
        line.split("=", 1)
        for line in Path(str(path) + ".txt").read_text().splitlines()
        if line.strip()
    )
    vmin = float(meta["vmin"])
    vmax = float(meta["vmax"])
    values = vmin + pixels.astype(np.float64).reshape(rows, cols) * ((vmax - vmin) / PGM_MAXVAL)
    return values


_CANONICAL_KEYS = (
    "label",
    "n_x",
    "extent",
    "n_s",
    "radius",
    "n_t",
    "t_final",
    "directivity",
    "sound_speed",
    "seed",
)
_CUSTOM_KEYS = ("arc_start", "arc_end")
_DEFAULT_N_S = {"A_limited_view": 100, "B_sparse": 20, "C_limited_sparse": 20, "custom": 100}


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "on", "yes"):
        return True
    if lowered in ("0", "false", "off", "no"):
        return False
    raise ConfigError(f"cannot parse boolean value {text!r}")


def load_scenario_cfg(path):
    """Parse a key=value scenario file; returns (Scenario, seed or None).

    Lines starting with '#' (and blank lines) are ignored.  Unknown keys
    are rejected so typos do not silently fall back to defaults.
    """
    entries = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if key in entries:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        entries[key] = value.strip()

    label = entries.pop("label", None)
    if label is None:
        raise ConfigError(f"{path}: missing required key 'label'")
    allowed = set(_CANONICAL_KEYS)
    if label == "custom":
        allowed |= set(_CUSTOM_KEYS)
    unknown = set(entries) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")

    try:
        n = int(entries.get("n_x", 256))
        extent = float(entries.get("extent", 1.0))
        n_s = int(entries.get("n_s", _DEFAULT_N_S.get(label, 100)))
        radius = float(entries.get("radius", 1.0))
        n_t = int(entries.get("n_t", 400))
        t_final = float(entries.get("t_final", 3.0))
        sound_speed = float(entries.get("sound_speed", 1.0))
        arc_start = float(entries.get("arc_start", math.pi / 2))
        arc_end = float(entries.get("arc_end", 3 * math.pi / 2))
        seed = int(entries["seed"]) if "seed" in entries else None
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    directivity = _parse_bool(entries.get("directivity", "true"))

    detectors = make_detectors(label, n_s, radius, arc_start, arc_end)
    scenario = Scenario(
        grid=ImageGrid(n=n, extent=extent),
        detectors=detectors,
        time=TimeGrid(n_t=n_t, t_final=t_final),
        directivity_enabled=directivity,
        sound_speed=sound_speed,
        label=label,
    )
    return scenario, seed


def save_scenario_cfg(path, scenario: Scenario, seed: int | None = None, arc=None):
    """Write a scenario back out as key=value text.

    Custom-arc scenarios must pass ``arc`` = (start, end) in radians since
    the detector array alone does not pin down the original arc bounds.
    """
    lines = [
        "# measurement configuration",
        f"label={scenario.label}",
        f"n_x={scenario.grid.n}",
        f"extent={scenario.grid.extent!r}",
        f"n_s={scenario.detectors.n_s}",
        f"radius={scenario.detectors.radius!r}",
        f"n_t={scenario.time.n_t}",
        f"t_final={scenario.time.t_final!r}",
        f"directivity={'true' if scenario.directivity_enabled else 'false'}",
        f"sound_speed={scenario.sound_speed!r}",
    ]
    if scenario.label == "custom":
        if arc is None:
            raise ConfigError("custom scenarios need explicit arc=(start, end) to be saved")
        lines.append(f"arc_start={float(arc[0])!r}")
        lines.append(f"arc_end={float(arc[1])!r}")
    if seed is not None:
        lines.append(f"seed={int(seed)}")
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("ascii"))


class Dataset:
    """A directory of paired phantom/data tensors plus scenario and manifest.

    Layout: `scenario.cfg`, `manifest.txt`, and per sample
    `phantom_%05d.patb` + `data_%05d.patb`.  The manifest pins the split
    tag and the ordered sample stems; :meth:`validate` cross-checks it
    against the actual listing.
    """

    MANIFEST = "manifest.txt"
    SCENARIO = "scenario.cfg"

    def __init__(self, root, scenario: Scenario, split: str, stems: list):
        self.root = Path(root)
        self.scenario = scenario
        self.split = split
        self.stems = list(stems)

    def __len__(self):
        return len(self.stems)

    @staticmethod
    def stem(index: int) -> str:
        return f"phantom_{index:05d}"

    @classmethod
    def open(cls, root) -> "Dataset":
        root = Path(root)
        scenario, _ = load_scenario_cfg(root / cls.SCENARIO)
        split = None
        count = None
        stems = []
        for lineno, line in enumerate((root / cls.MANIFEST).read_text().splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" in stripped:
                key, value = stripped.split("=", 1)
                if key == "split":
                    split = value
                elif key == "count":
                    count = int(value)
                elif key != "scenario":
                    raise ConfigError(f"{root / cls.MANIFEST}:{lineno}: unknown key {key!r}")
            else:
                stems.append(stripped)
        if split not in ("train", "test"):
            raise ConfigError(f"{root / cls.MANIFEST}: missing or bad split tag")
        if count != len(stems):
            raise ConfigError(f"{root / cls.MANIFEST}: count={count} but {len(stems)} stems listed")
        dataset = cls(root, scenario, split, stems)
        dataset.validate()
        return dataset

    def validate(self):
        if self.stems != sorted(self.stems):
            raise ConfigError(f"{self.root}: manifest stems out of order")
        for stem in self.stems:
            for name in (f"{stem}.patb", f"{stem.replace('phantom', 'data')}.patb"):
                if not (self.root / name).is_file():
                    raise FileNotFoundError(self.root / name)

    def write_manifest(self):
        lines = [f"split={self.split}", f"count={len(self.stems)}", f"scenario={self.SCENARIO}"]
        lines.extend(self.stems)
        atomic_write_bytes(self.root / self.MANIFEST, ("\n".join(lines) + "\n").encode("ascii"))

    def load_pair(self, index: int):
        """(SensorData, Image) for one sample, validated against the scenario."""
        stem = self.stems[index]
        phantom = read_patb(self.root / f"{stem}.patb")
        data = read_patb(self.root / f"{stem.replace('phantom', 'data')}.patb")
        image = Image(self.scenario.grid, phantom)
        sensor = SensorData(data, self.scenario.time, self.scenario.detectors)
        return sensor, image

    def pairs(self):
        return [self.load_pair(i) for i in range(len(self))]


def write_sample(root, index: int, phantom: Image, data: SensorData):
    """Write one phantom/data pair; each file lands atomically."""
    root = Path(root)
    write_patb(root / f"phantom_{index:05d}.patb", phantom.values)
    write_patb(root / f"data_{index:05d}.patb", data.values)
