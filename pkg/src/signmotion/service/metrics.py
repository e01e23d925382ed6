"""Per-stage latency accounting for a session."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STAGES = ("frontend", "encode", "decode", "ik", "serialize")


@dataclass
class StageMetrics:
    budget_ms: float = 150.0
    samples: dict[str, list[float]] = field(
        default_factory=lambda: {s: [] for s in STAGES}
    )
    end_to_end: list[float] = field(default_factory=list)
    chunk_checks: list[tuple[float, float]] = field(default_factory=list)

    def record(self, stage: str, duration: float, units: int = 1) -> None:
        """Log `units` per-unit samples for a stage (duration split evenly)."""
        if duration < 0:
            raise ValueError("durations must be >= 0")
        if units > 0:
            self.samples[stage].extend([duration / units] * units)

    def record_chunk(self, stage_total: float, wall: float, frames: int) -> None:
        """Whole-chunk accounting: per-frame end-to-end plus the stage-sum
        versus wall-clock sanity pair."""
        self.chunk_checks.append((stage_total, wall))
        if frames > 0:
            self.end_to_end.extend([wall / frames] * frames)

    def snapshot(self) -> dict:
        def stats(xs: list[float]) -> dict:
            if not xs:
                return {"count": 0, "mean_ms": 0.0, "p95_ms": 0.0}
            arr = np.asarray(xs) * 1e3
            return {
                "count": len(xs),
                "mean_ms": float(arr.mean()),
                "p95_ms": float(np.percentile(arr, 95)),
            }

        e2e = stats(self.end_to_end)
        return {
            "stages": {s: stats(self.samples[s]) for s in STAGES},
            "end_to_end": e2e,
            "over_budget": e2e["p95_ms"] > self.budget_ms,
        }
