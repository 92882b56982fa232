"""B-bit logarithmic number system for natively compressed weights.

A weight is stored as a sign and an integer level k, decoding to
``sign * sigma_star * exp(-k * eta0)`` with k in {0, ..., 2**B - 1}.
The magnitudes form a ladder in log space with rungs eta0 apart; the
multiplicative optimizer moves weights up and down the rungs by integer
increments, so training never leaves the representable set. Level 0 is
the largest magnitude (the sigma* weight clamp) and level 2**B - 1 the
smallest; the dynamic range is exp[(2**B - 1) * eta0].

The checkpoint format serializes signs and levels as one bit-packed
stream per layer (1 + B bits per weight), making files bit-exact across
round trips.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .optim import MadamState
from .tensor import ShapeError, Tensor, clamp, guarded_div

MAGIC = b"MADAMLNS"
FORMAT_VERSION = 1

# float-noise tolerance when checking that eta is on the eta0 grid
_RATIO_TOL = 1e-12


class EncodingError(ValueError):
    """Value cannot be represented as sign + level."""


class FormatError(ValueError):
    """Checkpoint bytes violate the container format."""


@dataclass(frozen=True)
class LnsSpec:
    """Ladder geometry: bit width, rung spacing eta0, and top magnitude."""

    bits: int
    eta0: float
    sigma_star: float

    def __post_init__(self):
        if not isinstance(self.bits, int) or self.bits < 2:
            raise ValueError(f"bits must be an integer >= 2, got {self.bits}")
        if self.eta0 <= 0:
            raise ValueError(f"eta0 must be positive, got {self.eta0}")
        if self.sigma_star <= 0:
            raise ValueError(f"sigma_star must be positive, got {self.sigma_star}")
        if (2 ** self.bits - 1) * self.eta0 > 700.0:
            raise ValueError("ladder span overflows float64 dynamic range")

    @property
    def num_levels(self) -> int:
        return 2 ** self.bits

    @property
    def max_level(self) -> int:
        return 2 ** self.bits - 1

    @property
    def dynamic_range(self) -> float:
        """Ratio of the largest to the smallest representable magnitude."""
        return float(np.exp(self.max_level * self.eta0))

    def min_magnitude(self) -> float:
        return self.sigma_star * float(np.exp(-self.max_level * self.eta0))


def steps_on_ladder(value: float, eta0: float) -> int:
    """Integer n with value = n * eta0; raises if value is off the grid."""
    ratio = value / eta0
    n = int(round(ratio))
    if abs(ratio - n) > _RATIO_TOL * max(1.0, abs(n)):
        raise ValueError(f"{value} is not an integer multiple of eta0={eta0}")
    return n


@dataclass(frozen=True)
class LnsTensor:
    """Sign bits and integer levels sharing one ladder spec."""

    spec: LnsSpec
    signs: np.ndarray
    levels: np.ndarray

    def __post_init__(self):
        signs = np.asarray(self.signs, dtype=np.int8)
        levels = np.asarray(self.levels, dtype=np.int64)
        if signs.shape != levels.shape:
            raise ShapeError(f"signs {signs.shape} vs levels {levels.shape}")
        if not np.all(np.abs(signs) == 1):
            raise ValueError("signs must be exactly -1 or +1")
        if np.any(levels < 0) or np.any(levels > self.spec.max_level):
            raise ValueError(f"levels must lie in [0, {self.spec.max_level}]")
        object.__setattr__(self, "signs", signs)
        object.__setattr__(self, "levels", levels)

    @property
    def shape(self):
        return self.levels.shape

    @property
    def size(self) -> int:
        return int(self.levels.size)

    def reshape(self, shape) -> "LnsTensor":
        return LnsTensor(self.spec, self.signs.reshape(shape), self.levels.reshape(shape))


def decode(t: LnsTensor) -> Tensor:
    """Elementwise sign * sigma_star * exp(-k * eta0)."""
    return t.signs.astype(np.float64) * t.spec.sigma_star * np.exp(
        -t.levels.astype(np.float64) * t.spec.eta0
    )


def encode_nearest(x: Tensor, spec: LnsSpec) -> LnsTensor:
    """Nearest ladder point for each element of a float tensor.

    The level is the nearest integer to (ln sigma* - ln |x|) / eta0,
    clamped to [0, 2**B - 1]; exact half-way points round half-to-even.
    Values within 1e-9 rungs of a half-way point are treated as ties so
    that the rule is reachable despite log/exp rounding. Zeros are
    rejected: a sign + exponent system has no zero.
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(x == 0.0):
        raise EncodingError("zero is not representable on the ladder")
    if not np.all(np.isfinite(x)):
        raise EncodingError("cannot encode NaN or Inf")
    t = (np.log(spec.sigma_star) - np.log(np.abs(x))) / spec.eta0
    half_grid = np.round(t * 2.0) / 2.0
    t = np.where(np.abs(t - half_grid) < 1e-9, half_grid, t)
    levels = np.clip(np.round(t), 0, spec.max_level).astype(np.int64)
    signs = np.where(x > 0, 1, -1).astype(np.int8)
    return LnsTensor(spec, signs, levels)


def ladder_init(spec: LnsSpec, shape, rng: np.random.Generator) -> LnsTensor:
    """Signs uniform on {-1, +1} and levels uniform on [0, 2**B - 1]."""
    signs = (rng.integers(0, 2, size=shape) * 2 - 1).astype(np.int8)
    levels = rng.integers(0, spec.num_levels, size=shape, dtype=np.int64)
    return LnsTensor(spec, signs, levels)


def _check_state_compatible(state: MadamState, spec: LnsSpec) -> tuple[int, int]:
    """eta and eta* must sit on the eta0 grid; returns them in rung units."""
    steps_eta = steps_on_ladder(state.eta, spec.eta0)
    steps_eta_star = steps_on_ladder(state.eta_star, spec.eta0)
    if steps_eta < 1:
        raise ValueError(f"eta={state.eta} is below the base precision {spec.eta0}")
    return steps_eta, steps_eta_star


def quantized_madam_step(
    state: MadamState, tensors: list[LnsTensor], grads: list[Tensor]
) -> tuple[MadamState, list[LnsTensor]]:
    """Madam step carried out entirely as integer moves on the ladder.

    The clamped gradient ratio is rounded (half-to-even) to the nearest
    multiple of eta0/eta, which turns the multiplicative factor into an
    exact integer level increment; levels saturate at both ladder ends.
    Level 0 is the sigma* weight clamp.
    """
    if len(tensors) != len(grads) or len(tensors) != len(state.gbar_sq):
        raise ShapeError("tensors, grads and state must align")
    new_g2 = []
    new_tensors = []
    for lt, g, g2 in zip(tensors, grads, state.gbar_sq):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != lt.shape:
            raise ShapeError(f"grad shape {g.shape} vs weights {lt.shape}")
        steps_eta, _ = _check_state_compatible(state, lt.spec)
        g2_next = (1.0 - state.beta) * np.square(g) + state.beta * g2
        r = clamp(guarded_div(g, np.sqrt(g2_next), state.eps), state.eta_star / state.eta)
        moves = np.round(r * steps_eta).astype(np.int64)
        levels = np.clip(lt.levels + lt.signs.astype(np.int64) * moves, 0, lt.spec.max_level)
        new_tensors.append(LnsTensor(lt.spec, lt.signs, levels))
        new_g2.append(g2_next)
    return replace(state, gbar_sq=tuple(new_g2)), new_tensors


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CheckpointEntry:
    """One named layer: its ladder tensor and optional second-moment EMA."""

    name: str
    tensor: LnsTensor
    gbar_sq: Optional[np.ndarray] = None


def _pack_bits(signs: np.ndarray, levels: np.ndarray, bits: int) -> bytes:
    """One little-endian bitstream: n sign bits then n levels at B bits."""
    n = signs.size
    sign_bits = (signs.ravel() > 0).astype(np.uint8)
    shifts = np.arange(bits, dtype=np.int64)
    level_bits = ((levels.ravel()[:, None] >> shifts) & 1).astype(np.uint8)
    stream = np.concatenate([sign_bits, level_bits.ravel()])
    return np.packbits(stream, bitorder="little").tobytes()


def _unpack_bits(payload: bytes, n: int, bits: int) -> tuple[np.ndarray, np.ndarray]:
    total = n * (bits + 1)
    raw = np.frombuffer(payload, dtype=np.uint8)
    stream = np.unpackbits(raw, bitorder="little", count=total)
    signs = np.where(stream[:n] == 1, 1, -1).astype(np.int8)
    shifts = np.arange(bits, dtype=np.int64)
    level_bits = stream[n:].reshape(n, bits).astype(np.int64)
    levels = np.sum(level_bits << shifts, axis=1)
    return signs, levels


def payload_nbytes(n: int, bits: int) -> int:
    """Packed stream size for n weights: ceil(n * (B + 1) / 8) bytes."""
    return (n * (bits + 1) + 7) // 8


def write_checkpoint(entries: list[CheckpointEntry]) -> bytes:
    """Serialize layers to the bit-exact container format."""
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HI", FORMAT_VERSION, len(entries))
    for entry in entries:
        name_bytes = entry.name.encode("utf-8")
        if len(name_bytes) > 0xFFFF:
            raise FormatError(f"layer name too long: {len(name_bytes)} bytes")
        t = entry.tensor
        out += struct.pack("<H", len(name_bytes))
        out += name_bytes
        out += struct.pack("<BddQ", t.spec.bits, t.spec.eta0, t.spec.sigma_star, t.size)
        out += _pack_bits(t.signs, t.levels, t.spec.bits)
        if entry.gbar_sq is None:
            out += struct.pack("<B", 0)
        else:
            g2 = np.ascontiguousarray(entry.gbar_sq, dtype=np.float64).ravel()
            if g2.size != t.size:
                raise FormatError(f"gbar_sq size {g2.size} != weight count {t.size}")
            out += struct.pack("<B", 1)
            out += g2.astype("<f8").tobytes()
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated checkpoint: wanted {n} bytes at offset {self.pos}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(data: bytes, expect_bits: int | None = None) -> list[CheckpointEntry]:
    """Parse checkpoint bytes back into layer entries.

    ``expect_bits`` optionally pins the bit width; a file with a
    different B is rejected.
    """
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError("bad magic bytes")
    version, layer_count = r.unpack("<HI")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    entries = []
    for _ in range(layer_count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        bits, eta0, sigma_star, count = r.unpack("<BddQ")
        if bits < 2 or bits > 63:
            raise FormatError(f"bit width {bits} out of range")
        if expect_bits is not None and bits != expect_bits:
            raise FormatError(f"bit width mismatch: file has {bits}, expected {expect_bits}")
        spec = LnsSpec(bits=int(bits), eta0=eta0, sigma_star=sigma_star)
        signs, levels = _unpack_bits(r.take(payload_nbytes(count, bits)), int(count), int(bits))
        (has_gbar,) = r.unpack("<B")
        gbar = None
        if has_gbar == 1:
            gbar = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64)
        elif has_gbar != 0:
            raise FormatError(f"bad gbar_sq presence flag {has_gbar}")
        entries.append(CheckpointEntry(name, LnsTensor(spec, signs, levels), gbar))
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after last layer")
    return entries


def serialize(t: LnsTensor, name: str = "tensor", gbar_sq: np.ndarray | None = None) -> bytes:
    """Single-tensor checkpoint; shape flattens to row-major order."""
    return write_checkpoint([CheckpointEntry(name, t.reshape(-1), gbar_sq)])


def deserialize(data: bytes) -> LnsTensor:
    """Inverse of ``serialize``; returns the flat tensor."""
    entries = read_checkpoint(data)
    if len(entries) != 1:
        raise FormatError(f"expected a single tensor, found {len(entries)} layers")
    return entries[0].tensor
