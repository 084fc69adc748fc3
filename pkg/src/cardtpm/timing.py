"""Response-time models for the RTM challenge-response simulation.

Models produce one latency draw (microseconds) per protocol round:

* ``constant`` always returns the same value;
* ``empirical`` draws uniformly from a sample list (measured or synthetic);
* ``parametric`` draws from a triangular distribution on [min, max] with the
  given mode.

A relay attacker is modeled as additive channel delay on top of the honest
response time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

# Distance-bounding wire sizes (bits) for the challenge and response APDUs.
CHALLENGE_BITS = 112
RESPONSE_BITS = 304


class TimingError(ValueError):
    pass


@dataclass(frozen=True)
class TimingModel:
    kind: str  # constant | empirical | parametric
    value_us: float = 0.0
    samples_us: tuple[float, ...] = ()
    min_us: float = 0.0
    max_us: float = 0.0
    mode_us: float = 0.0
    relay_delay_us: float = 0.0
    challenge_bits: int = CHALLENGE_BITS
    response_bits: int = RESPONSE_BITS

    def __post_init__(self):
        if self.kind not in ("constant", "empirical", "parametric"):
            raise TimingError(f"unknown timing model kind {self.kind!r}")
        if self.kind == "empirical":
            if not self.samples_us:
                raise TimingError("empirical model needs at least one sample")
            if any(s <= 0 for s in self.samples_us):
                raise TimingError("latency samples must be positive")
        if self.kind == "constant" and self.value_us <= 0:
            raise TimingError("constant latency must be positive")
        if self.kind == "parametric" and not (0 < self.min_us <= self.mode_us <= self.max_us):
            raise TimingError("parametric model needs 0 < min <= mode <= max")

    @classmethod
    def constant(cls, value_us: float, relay_delay_us: float = 0.0) -> "TimingModel":
        return cls(kind="constant", value_us=value_us, relay_delay_us=relay_delay_us)

    @classmethod
    def empirical(cls, samples_us: Sequence[float], relay_delay_us: float = 0.0) -> "TimingModel":
        return cls(kind="empirical", samples_us=tuple(samples_us),
                   relay_delay_us=relay_delay_us)

    @classmethod
    def parametric(cls, min_us: float, max_us: float, mode_us: Optional[float] = None,
                   relay_delay_us: float = 0.0) -> "TimingModel":
        if mode_us is None:
            mode_us = (min_us + max_us) / 2
        return cls(kind="parametric", min_us=min_us, max_us=max_us, mode_us=mode_us,
                   relay_delay_us=relay_delay_us)

    @classmethod
    def bernoulli(cls, p_within: float, threshold_us: float,
                  lo_us: Optional[float] = None, hi_us: Optional[float] = None,
                  denominator: int = 100) -> "TimingModel":
        """Two-point empirical model succeeding the threshold check with
        probability p_within (p must be a multiple of 1/denominator)."""
        hits = round(p_within * denominator)
        if abs(hits / denominator - p_within) > 1e-12:
            raise TimingError(f"p={p_within} not representable over {denominator} samples")
        lo = lo_us if lo_us is not None else threshold_us * 0.9
        hi = hi_us if hi_us is not None else threshold_us * 1.2
        if not lo <= threshold_us < hi:
            raise TimingError("two-point supports must straddle the threshold")
        return cls.empirical([lo] * hits + [hi] * (denominator - hits))

    def with_relay(self, relay_delay_us: float) -> "TimingModel":
        from dataclasses import replace
        return replace(self, relay_delay_us=relay_delay_us)

    def draw(self, rng) -> float:
        """One end-to-end latency draw, relay delay included."""
        if self.kind == "constant":
            base = self.value_us
        elif self.kind == "empirical":
            base = self.samples_us[rng.randrange(len(self.samples_us))]
        else:
            base = rng.triangular(self.min_us, self.max_us, self.mode_us)
        return base + self.relay_delay_us

    @property
    def support_min_us(self) -> float:
        if self.kind == "constant":
            return self.value_us + self.relay_delay_us
        if self.kind == "empirical":
            return min(self.samples_us) + self.relay_delay_us
        return self.min_us + self.relay_delay_us


def load_samples(path) -> list[float]:
    """Timing samples file: one integer/float (microseconds) per line."""
    samples = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.split("#")[0].strip()
            if not line:
                continue
            try:
                samples.append(float(line))
            except ValueError:
                raise TimingError(f"{path}:{line_no}: not a number: {line!r}") from None
    if not samples:
        raise TimingError(f"{path}: no samples")
    return samples


def bundled_rtm_samples() -> list[float]:
    """The synthetic 30-sample RTM response-time dataset shipped with the
    package: support [563, 894] us, 25 of 30 samples at or below 721 us."""
    text = resources.files("cardtpm").joinpath("data/rtm_timing_us.txt").read_text()
    samples = [float(line.split("#")[0]) for line in text.splitlines()
               if line.split("#")[0].strip()]
    return samples
