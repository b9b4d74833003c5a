"""Resolution lookup tables: accuracy, decoding speed and payload per candidate resolution."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import yaml

BITS_PER_MB = 8e6  # MB = 10^6 bytes


class ProfileError(ValueError):
    pass


class InfeasibleAccuracy(ProfileError):
    """No candidate resolution meets a user's accuracy floor (constraint C1)."""

    def __init__(self, acc_min: float, best: float, user_id=None):
        self.acc_min = acc_min
        self.best = best
        self.user_id = user_id
        who = f"user {user_id}: " if user_id is not None else ""
        super().__init__(
            f"{who}constraint C1 infeasible: acc_min={acc_min} exceeds best table accuracy {best}")


@dataclass(frozen=True)
class ResolutionEntry:
    label: str
    pixels: int
    accuracy: float
    speed_tokens_per_s: float
    payload_mb: float


@dataclass(frozen=True)
class ResolutionProfile:
    entries: tuple[ResolutionEntry, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        es = self.entries
        if not es:
            raise ProfileError("profile needs at least one entry")
        for e in es:
            if e.speed_tokens_per_s <= 0:
                raise ProfileError(f"{e.label}: speed must be > 0")
            if e.payload_mb < 0 or not 0.0 <= e.accuracy <= 1.0:
                raise ProfileError(f"{e.label}: payload >= 0 and accuracy in [0,1] required")
        for prev, cur in zip(es, es[1:]):
            if cur.pixels <= prev.pixels:
                raise ProfileError("pixels must be strictly increasing")
            if cur.accuracy < prev.accuracy:
                raise ProfileError("accuracy must be non-decreasing in pixels")
            if cur.speed_tokens_per_s > prev.speed_tokens_per_s:
                raise ProfileError("speed must be non-increasing in pixels")
            if cur.payload_mb <= prev.payload_mb:
                raise ProfileError("payload must be strictly increasing in pixels")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def resolutions(self) -> tuple[int, ...]:
        return tuple(e.pixels for e in self.entries)

    def entry(self, res: int) -> ResolutionEntry:
        for e in self.entries:
            if e.pixels == res:
                return e
        raise KeyError(f"resolution {res} not in profile {self.resolutions}")

    def accuracy(self, res: int) -> float:
        return self.entry(res).accuracy

    def speed(self, res: int) -> float:
        return self.entry(res).speed_tokens_per_s

    def payload_mb(self, res: int) -> float:
        return self.entry(res).payload_mb

    def index(self, res: int) -> int:
        return self.resolutions.index(self.entry(res).pixels)

    def to_dict(self) -> dict:
        return {"entries": [
            {"label": e.label, "pixels": e.pixels, "accuracy": e.accuracy,
             "speed_tokens_per_s": e.speed_tokens_per_s, "payload_mb": e.payload_mb}
            for e in self.entries]}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ResolutionProfile":
        try:
            rows = doc["entries"]
            return cls(tuple(
                ResolutionEntry(str(r["label"]), int(r["pixels"]), float(r["accuracy"]),
                                float(r["speed_tokens_per_s"]), float(r["payload_mb"]))
                for r in rows))
        except (KeyError, TypeError) as exc:
            raise ProfileError(f"malformed profile document: {exc}") from exc

    @classmethod
    def load(cls, path: str) -> "ResolutionProfile":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh))


def _pixel_scaled_payload(pixels: int) -> float:
    # Interior rows are not printed in the source table; scale the 384^2
    # payload by pixel count, rounded like the printed rows (2 decimals).
    return round(0.42 * pixels / 384**2, 2)


def default_profile() -> ResolutionProfile:
    """LLaVA-HR on TextVQA at 384^2, 768^2, 1024^2, 1536^2."""
    return ResolutionProfile((
        ResolutionEntry("384p", 384**2, 0.5963, 23.8, 0.42),
        ResolutionEntry("768p", 768**2, 0.6436, 19.9, _pixel_scaled_payload(768**2)),
        ResolutionEntry("1024p", 1024**2, 0.6711, 19.7, _pixel_scaled_payload(1024**2)),
        ResolutionEntry("1536p", 1536**2, 0.6796, 12.6, 6.74),
    ))


def proc_time_s(profile: ResolutionProfile, res: int, expected_tokens: float) -> float:
    return expected_tokens / profile.speed(res)


def payload_bits(profile: ResolutionProfile, res: int, n_queries: int) -> float:
    if n_queries < 1:
        raise ValueError("n_queries must be >= 1")
    return profile.payload_mb(res) * BITS_PER_MB * n_queries


def min_feasible_resolution(profile: ResolutionProfile, acc_min: float, user_id=None) -> int:
    for e in profile.entries:
        if e.accuracy >= acc_min:
            return e.pixels
    raise InfeasibleAccuracy(acc_min, profile.entries[-1].accuracy, user_id)
