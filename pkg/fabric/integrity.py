"""Per-move integrity checking: CRC-32 and the corruption fault model."""

import zlib
from dataclasses import dataclass, field

CRC_MASK = 0xFFFFFFFF


def crc32(data: bytes, value: int = 0) -> int:
    """Standard CRC-32 (poly 0x04C11DB7 reflected, init/xorout 0xFFFFFFFF).

    ``value`` continues a running checksum so large payloads can be fed in
    chunks.
    """
    return zlib.crc32(data, value) & CRC_MASK


def crc32_hex(value: int) -> str:
    return f"{value & CRC_MASK:08x}"


def parse_crc_hex(text: str) -> int:
    value = int(text.strip().removeprefix("0x"), 16)
    if not 0 <= value <= CRC_MASK:
        raise ValueError(f"CRC {text!r} is not a 32-bit value")
    return value


def synthetic_crc(logical_name: str, size: int) -> int:
    """Checksum standing in for file content, which is never materialised."""
    return crc32(f"{logical_name}\0{size}".encode())


@dataclass(frozen=True)
class FaultProfile:
    """Independent per-attempt corruption probability.

    ``attempt_probabilities[i]`` overrides ``probability`` for attempt i
    (0-based), so a profile can force a fault on the first try only.
    """

    probability: float = 0.0
    attempt_probabilities: tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        for p in (self.probability, *self.attempt_probabilities):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"fault probability {p} outside [0, 1]")

    def for_attempt(self, attempt: int) -> float:
        if attempt < len(self.attempt_probabilities):
            return self.attempt_probabilities[attempt]
        return self.probability


NO_FAULTS = FaultProfile()
