"""Pixel-budget replay buffer with reservoir updates and a class-index map.

The budget is counted in stored pixel positions: a buffer worth K
full-resolution r x r images holds K * r^2 pixels. In surrogate mode the
same budget buys factor^2 times as many slots, each holding a compressed
exemplar of side floor(r / factor).
"""

from __future__ import annotations

import bisect
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError
from .imaging import Image, Rng
from .sampler import GpsSample

SNAPSHOT_MAGIC = b"GPSB"
SNAPSHOT_VERSION = 1

MODE_FULL = "full"
MODE_GPS = "gps"
_MODE_CODES = {MODE_FULL: 0, MODE_GPS: 1}
_MODE_NAMES = {v: k for k, v in _MODE_CODES.items()}


@dataclass(frozen=True)
class PixelBudget:
    """Memory budget expressed as K reference images of resolution r."""

    image_count: int
    resolution: int

    def __post_init__(self):
        if self.image_count < 1:
            raise ConfigError(f"budget image count must be >= 1, got {self.image_count}")
        if self.resolution < 1:
            raise ConfigError(f"budget resolution must be >= 1, got {self.resolution}")

    @property
    def capacity_pixels(self):
        return self.image_count * self.resolution ** 2


class ReplayBuffer:
    """Fixed-slot exemplar store under a pixel budget, reservoir-managed.

    In "full" mode slots hold r x r Images; in "gps" mode they hold
    surrogates of side floor(r/factor), and there are factor^2 times as
    many slots for the same budget. Single-writer: confine each buffer to
    one worker.
    """

    def __init__(self, budget: PixelBudget, mode: str, rng: Rng, factor: int = 1,
                 channels: int = 3):
        if mode not in _MODE_CODES:
            raise ConfigError(f"unknown buffer mode {mode!r}: expected 'full' or 'gps'")
        if mode == MODE_GPS:
            if factor < 1:
                raise ConfigError(f"factor must be >= 1, got {factor}")
            if budget.resolution // factor < 1:
                raise ConfigError(
                    f"factor {factor} exceeds resolution {budget.resolution}"
                )
        else:
            factor = 1
        if channels not in (1, 3):
            raise ConfigError(f"channel count must be 1 or 3, got {channels}")
        self.budget = budget
        self.mode = mode
        self.factor = factor
        self.channels = channels
        self.rng = rng
        self.slot_count = budget.image_count * (factor ** 2 if mode == MODE_GPS else 1)
        self.slots: list[Image | GpsSample | None] = [None] * self.slot_count
        self.seen_count = 0
        self._class_index: dict[int, list[int]] = {}

    @property
    def exemplar_side(self):
        """Side length every stored exemplar must have."""
        if self.mode == MODE_GPS:
            return self.budget.resolution // self.factor
        return self.budget.resolution

    @property
    def occupied_count(self):
        return min(self.seen_count, self.slot_count)

    @property
    def occupied_indices(self):
        return [i for i, s in enumerate(self.slots) if s is not None]

    @property
    def occupied_pixels(self):
        return sum(s.pixel_count for s in self.slots if s is not None)

    def _check_item(self, item):
        if self.mode == MODE_GPS:
            if not isinstance(item, GpsSample):
                raise ValueError(f"gps-mode buffer stores surrogates, got {type(item).__name__}")
            if item.factor != self.factor:
                raise ValueError(
                    f"surrogate factor {item.factor} does not match buffer factor {self.factor}"
                )
        else:
            if not isinstance(item, Image):
                raise ValueError(f"full-mode buffer stores images, got {type(item).__name__}")
            if not item.is_square():
                raise ValueError(f"exemplar must be square, got {item.height}x{item.width}")
        side = item.data.shape[0]
        if side != self.exemplar_side:
            raise ValueError(
                f"exemplar side {side} does not match buffer side {self.exemplar_side}"
            )
        if item.channels != self.channels:
            raise ValueError(
                f"exemplar has {item.channels} channels, buffer expects {self.channels}"
            )
        if item.label is None:
            raise ValueError("exemplar must carry a label")

    def offer(self, item):
        """Reservoir update: returns (accepted, evicted_item_or_None).

        The first slot_count offers always land; offer n+1 is kept with
        probability slot_count / (n+1), replacing a uniformly random slot.
        """
        self._check_item(item)
        if self.seen_count < self.slot_count:
            slot = self.seen_count
            self.slots[slot] = item
            self._index_add(item.label, slot)
            self.seen_count += 1
            return True, None
        draw = self.rng.integer(0, self.seen_count + 1)
        self.seen_count += 1
        if draw >= self.slot_count:
            return False, None
        evicted = self.slots[draw]
        self._index_remove(evicted.label, draw)
        self.slots[draw] = item
        self._index_add(item.label, draw)
        return True, evicted

    def _index_add(self, label, slot):
        lst = self._class_index.setdefault(label, [])
        bisect.insort(lst, slot)

    def _index_remove(self, label, slot):
        lst = self._class_index[label]
        lst.remove(slot)
        if not lst:
            del self._class_index[label]

    def indices_for_class(self, label):
        """Occupied slot indices holding the given class, ascending. Empty if absent."""
        return list(self._class_index.get(label, ()))

    def classes_present(self):
        return sorted(self._class_index)

    def class_counts(self):
        return {c: len(v) for c, v in sorted(self._class_index.items())}

    # --- snapshot / restore ---

    def snapshot(self) -> bytes:
        """Serialize slots, counters, class index basis, and rng state."""
        parts = [SNAPSHOT_MAGIC, struct.pack("<H", SNAPSHOT_VERSION)]
        parts.append(struct.pack("<BHIIB", _MODE_CODES[self.mode], self.factor,
                                 self.budget.image_count, self.budget.resolution,
                                 self.channels))
        parts.append(struct.pack("<Q", self.seen_count))
        parts.append(self.rng.state_bytes())
        for slot in self.slots:
            if slot is None:
                parts.append(b"\x00")
            else:
                parts.append(b"\x01")
                parts.append(struct.pack("<I", slot.label))
                parts.append(np.ascontiguousarray(slot.data).tobytes())
        return b"".join(parts)

    @classmethod
    def restore(cls, blob: bytes) -> "ReplayBuffer":
        if blob[:4] != SNAPSHOT_MAGIC:
            raise FormatError(f"bad snapshot magic {blob[:4]!r}: expected {SNAPSHOT_MAGIC!r}")
        pos = 4
        try:
            (version,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            if version != SNAPSHOT_VERSION:
                raise FormatError(f"unsupported snapshot version {version}")
            mode_code, factor, image_count, resolution, channels = struct.unpack_from(
                "<BHIIB", blob, pos
            )
            pos += 12
            (seen_count,) = struct.unpack_from("<Q", blob, pos)
            pos += 8
        except struct.error as exc:
            raise FormatError(f"truncated snapshot header: {exc}") from exc
        if mode_code not in _MODE_NAMES:
            raise FormatError(f"unknown mode code {mode_code}")
        rng, used = Rng.from_state_bytes(blob, pos)
        pos += used
        buf = cls(PixelBudget(image_count, resolution), _MODE_NAMES[mode_code], rng,
                  factor=factor if mode_code == 1 else 1, channels=channels)
        buf.seen_count = seen_count
        side = buf.exemplar_side
        payload_len = side * side * channels
        for slot in range(buf.slot_count):
            flag = blob[pos : pos + 1]
            if not flag:
                raise FormatError(f"truncated snapshot: missing slot {slot}")
            pos += 1
            if flag == b"\x00":
                continue
            if flag != b"\x01":
                raise FormatError(f"corrupt slot flag {flag!r} at slot {slot}")
            if pos + 4 + payload_len > len(blob):
                raise FormatError(f"truncated snapshot: slot {slot} payload incomplete")
            (label,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            data = np.frombuffer(blob, dtype=np.uint8, count=payload_len, offset=pos)
            pos += payload_len
            arr = data.reshape(side, side, channels).copy()
            if buf.mode == MODE_GPS:
                buf.slots[slot] = GpsSample(arr, label, factor, resolution)
            else:
                buf.slots[slot] = Image(arr, label)
            buf._index_add(label, slot)
        if pos != len(blob):
            raise FormatError(f"snapshot has {len(blob) - pos} trailing bytes")
        return buf
