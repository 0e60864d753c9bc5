from __future__ import annotations

from dataclasses import asdict, dataclass

from corgipile.errors import ConfigError

ETA_GRID = (0.1, 0.01, 0.001)


@dataclass(frozen=True)
class LrSchedule:
    """Per-epoch learning rate.

    ``exp_decay``: ``eta0 * decay**s``.  ``theorem``: ``6 / (b * n * mu * (s + a))``
    with the strong-convexity constant ``mu`` and offset ``a`` supplied by the
    caller (nothing here estimates them).
    """

    mode: str = "exp_decay"
    eta0: float = 0.01
    decay: float = 0.95
    b: float = 0.0
    n: float = 0.0
    mu: float = 0.0
    a: float = 0.0

    def __post_init__(self):
        if self.mode == "exp_decay":
            if self.eta0 <= 0 or not 0 < self.decay <= 1:
                raise ConfigError("exp_decay needs eta0 > 0 and decay in (0, 1]")
        elif self.mode == "theorem":
            if min(self.b, self.n, self.mu) <= 0 or self.a <= 0:
                raise ConfigError("theorem schedule needs b, n, mu > 0 and a > 0")
        else:
            raise ConfigError(f"unknown schedule mode {self.mode!r}")

    @classmethod
    def exp_decay(cls, eta0: float, decay: float = 0.95) -> "LrSchedule":
        return cls("exp_decay", eta0=eta0, decay=decay)

    @classmethod
    def theorem(cls, b: float, n: float, mu: float, a: float) -> "LrSchedule":
        return cls("theorem", b=b, n=n, mu=mu, a=a)

    def __call__(self, s: int) -> float:
        if self.mode == "exp_decay":
            return self.eta0 * self.decay ** s
        return 6.0 / (self.b * self.n * self.mu * (s + self.a))

    def to_dict(self) -> dict:
        return asdict(self)
