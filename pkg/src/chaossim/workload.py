"""Open-loop load generation and per-second latency summaries.

A step-wise user ramp drives the light-control service: one initial user, one
more every add_interval, each issuing a request per second with small seeded
jitter, all terminated at ramp end. Pending work then drains out of the real
per-replica queues, so the post-termination tail is emergent, not scripted.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass
from pathlib import Path

from .evaluation import TraceIndex, latency_stats, value_at


@dataclass
class LoadProfile:
    initial_users: int = 1
    add_interval_ms: int = 20_000
    per_user_rate_rps: float = 1.0
    ramp_duration_ms: int = 1_200_000
    target_service: str = "light-control"
    post_ramp_observation_ms: int = 900_000
    jitter_ms: int = 50
    start_ms: int = 0

    def validate(self) -> None:
        for name in ("initial_users", "add_interval_ms", "per_user_rate_rps",
                     "ramp_duration_ms", "post_ramp_observation_ms"):
            if getattr(self, name) <= 0:
                raise ValueError(f"load profile field {name} must be positive")

    def users_at(self, t_ms: int) -> int:
        if t_ms < self.start_ms or t_ms >= self.start_ms + self.ramp_duration_ms:
            return 0
        return self.initial_users + (t_ms - self.start_ms) // self.add_interval_ms

    @property
    def end_ms(self) -> int:
        return self.start_ms + self.ramp_duration_ms


def generate_requests(profile: LoadProfile, rng: random.Random) -> list[tuple[int, str]]:
    """Request schedule as (at_ms, user_id); nothing fires at or past ramp end."""
    profile.validate()
    schedule: list[tuple[int, str]] = []
    interval = round(1000.0 / profile.per_user_rate_rps)
    total_users = profile.initial_users + (profile.ramp_duration_ms - 1) // profile.add_interval_ms
    for u in range(total_users):
        join_at = profile.start_ms if u < profile.initial_users else (
            profile.start_ms + (u - profile.initial_users + 1) * profile.add_interval_ms)
        t = join_at
        user = f"user-{u}"
        while t < profile.end_ms:
            jitter = rng.randint(-profile.jitter_ms, profile.jitter_ms)
            at = min(max(t + jitter, join_at), profile.end_ms - 1)
            schedule.append((at, user))
            t += interval
    schedule.sort(key=lambda pair: (pair[0], pair[1]))
    return schedule


def summarize(index: TraceIndex, profile: LoadProfile, window: tuple[int, int]) -> list[dict]:
    """Per-second series: load, capacity, and the three latency statistics.

    Seconds with zero completed responses carry absent stats, not zeros.
    """
    a, b = window
    service = profile.target_service
    responses = index.responses.get(service, [])
    by_second: dict[int, list[int]] = {}
    for (done, latency, sent, probe, rid) in responses:
        if a <= done < b:
            by_second.setdefault((done - a) // 1000, []).append(latency)
    series = []
    for sec in range((b - a) // 1000):
        t = a + sec * 1000
        latencies = by_second.get(sec, [])
        stats = latency_stats(latencies)
        series.append({
            "second": sec,
            "at_ms": t,
            "responses": len(latencies),
            "active_users": profile.users_at(t),
            "replicas": value_at(index.healthy_timeline.get(service, []), t, 0),
            "mean_ms": stats["mean"],
            "slowest10_mean_ms": stats["slowest10_mean"],
            "slowest1_mean_ms": stats["slowest1_mean"],
        })
    return series


def write_series_csv(series: list[dict], path: str | Path) -> None:
    fields = ["second", "at_ms", "responses", "active_users", "replicas",
              "mean_ms", "slowest10_mean_ms", "slowest1_mean_ms"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in series:
            writer.writerow({k: ("" if row[k] is None else row[k]) for k in fields})
