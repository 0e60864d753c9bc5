from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from corgipile.errors import ConfigError

STRATEGIES = (
    "no_shuffle",
    "shuffle_once",
    "epoch_shuffle",
    "sliding_window",
    "mrs",
    "block_only",
    "corgipile",
)


@dataclass
class ShuffleConfig:
    """Strategy selector.

    ``corgipile_epoch`` picks what one CorgiPile epoch covers:

    * ``"full"``: every block is visited once per epoch; the buffer holds
      ``n`` blocks and is refilled until the shuffled block order is exhausted.
    * ``"sample"``: only ``n`` sampled blocks are visited, in one buffer fill.
    """

    strategy: str = "corgipile"
    buffer_fraction: float = 0.1
    seed: int = 0
    double_buffer: bool = False
    loop_ratio: int = 1
    corgipile_epoch: str = "full"
    index_budget: int = 10_000_000
    shuffled_copy: str | None = None

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; choose from {', '.join(STRATEGIES)}")
        if not 0 < self.buffer_fraction <= 1:
            raise ConfigError(f"buffer_fraction must be in (0, 1], got {self.buffer_fraction}")
        if self.loop_ratio < 0:
            raise ConfigError("loop_ratio must be >= 0")
        if self.corgipile_epoch not in ("full", "sample"):
            raise ConfigError(f"corgipile_epoch must be 'full' or 'sample', got {self.corgipile_epoch!r}")
        if self.double_buffer and self.strategy != "corgipile":
            raise ConfigError("double_buffer applies to the corgipile strategy only")

    def buffer_blocks(self, N: int) -> int:
        return buffer_blocks(self.buffer_fraction, N)

    def window_size(self, m: int) -> int:
        return max(1, math.floor(self.buffer_fraction * m + 1e-9))

    def to_dict(self) -> dict:
        return asdict(self)


def buffer_blocks(fraction: float, N: int) -> int:
    """Blocks the buffer holds: ``max(1, floor(fraction * N))``."""
    if not 0 < fraction <= 1:
        raise ConfigError(f"buffer fraction must be in (0, 1], got {fraction}")
    return max(1, math.floor(fraction * N + 1e-9))
