"""Deterministic discrete-event core.

Virtual integer-millisecond clock, ordered event queue, labeled RNG streams,
an execution trace, and a pub/sub message layer whose broker is an ordinary
(and therefore killable) service owned by the managed system.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterator


class EventKind(str, Enum):
    TIMER = "timer"
    MESSAGE_DELIVERY = "message-delivery"
    INJECTION = "injection"
    RECOVERY_ACTION = "recovery-action"
    WORKLOAD_REQUEST = "workload-request"


@dataclass
class Event:
    """A scheduled occurrence. Equal fire_at ties break on ascending id."""

    id: int
    fire_at: int
    target: str
    kind: EventKind
    payload: dict
    handler: Callable[["Simulator", "Event"], None] = field(repr=False)

    def sort_key(self) -> tuple[int, int]:
        return (self.fire_at, self.id)


@dataclass
class Message:
    """A published record routed through the broker service."""

    topic: str
    payload: dict
    publisher: str
    published_at: int
    deliver_delay: int = 10
    id: int = -1


@dataclass(frozen=True)
class Subscription:
    id: int
    replica: str
    pattern: str


def topic_matches(pattern: str, topic: str) -> bool:
    """MQTT-style matching: '+' spans one level, '#' spans the remainder."""
    p_parts = pattern.split("/")
    t_parts = topic.split("/")
    for i, p in enumerate(p_parts):
        if p == "#":
            return True
        if i >= len(t_parts):
            return False
        if p != "+" and p != t_parts[i]:
            return False
    return len(p_parts) == len(t_parts)


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def payload_digest(data: Any) -> str:
    return hashlib.sha1(canonical_json(data).encode()).hexdigest()[:12]


@dataclass
class TraceRecord:
    at: int
    kind: str
    source: str
    target: str
    data: dict

    def to_line(self) -> str:
        return canonical_json(
            {
                "at": self.at,
                "kind": self.kind,
                "source": self.source,
                "target": self.target,
                "data": self.data,
                "digest": payload_digest(self.data),
            }
        )

    @classmethod
    def from_line(cls, line: str) -> "TraceRecord":
        raw = json.loads(line)
        return cls(
            at=raw["at"],
            kind=raw["kind"],
            source=raw["source"],
            target=raw["target"],
            data=raw["data"],
        )


class Trace:
    """Append-only record of everything observable that happened in a run."""

    def __init__(self) -> None:
        self.records: list[TraceRecord] = []
        self._listeners: list[Callable[[TraceRecord], None]] = []

    def add_listener(self, fn: Callable[[TraceRecord], None]) -> None:
        self._listeners.append(fn)

    def append(self, at: int, kind: str, source: str, target: str, data: dict) -> TraceRecord:
        rec = TraceRecord(at=at, kind=kind, source=source, target=target, data=data)
        self.records.append(rec)
        for fn in self._listeners:
            fn(rec)
        return rec

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TraceRecord]:
        return iter(self.records)

    def export_lines(self) -> list[str]:
        return [rec.to_line() for rec in self.records]

    def write(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.export_lines()) + ("\n" if self.records else ""))

    @classmethod
    def load(cls, path: str | Path) -> "Trace":
        trace = cls()
        for line in Path(path).read_text().splitlines():
            if line.strip():
                trace.records.append(TraceRecord.from_line(line))
        return trace


class RngStreams:
    """One independent seeded stream per consumer label.

    Draws on one stream never perturb another, so adding a consumer does not
    reshuffle the randomness seen elsewhere.
    """

    def __init__(self, seed: int) -> None:
        self.seed = seed
        self._streams: dict[str, random.Random] = {}

    def stream(self, label: str) -> random.Random:
        rng = self._streams.get(label)
        if rng is None:
            rng = random.Random(f"{self.seed}:{label}")
            self._streams[label] = rng
        return rng


class SimClock:
    """Monotone virtual clock in integer milliseconds."""

    def __init__(self) -> None:
        self.now = 0

    def advance_to(self, at: int) -> None:
        if at < self.now:
            raise RuntimeError(f"clock moved backward: {self.now} -> {at}")
        self.now = at


class ScheduleError(ValueError):
    """An event was scheduled in the past (a caller bug, not a chaos effect)."""


# Replica state strings shared with the managed system.
REPLICA_STARTING = "starting"
REPLICA_HEALTHY = "healthy"
REPLICA_TERMINATED = "terminated"


class Simulator:
    """Single-threaded event loop with a pub/sub layer.

    The broker gate, replica states, and per-channel extra delays are supplied
    by the managed system through hooks so the kernel stays free of smart-office
    specifics while deliveries still honor faults injected into it.
    """

    def __init__(self, seed: int = 0, base_deliver_delay: int = 10) -> None:
        self.clock = SimClock()
        self.trace = Trace()
        self.rng = RngStreams(seed)
        self.base_deliver_delay = base_deliver_delay
        self.topic_delays: dict[str, int] = {}
        self._queue: list[tuple[int, int, Event]] = []
        self._next_event_id = 0
        self._next_message_id = 0
        self._next_sub_id = 0
        self._subs: dict[tuple[str, str], Subscription] = {}
        self._blocked_publishers: set[str] = set()
        # Hooks wired by the managed system.
        self.replica_state: Callable[[str], str | None] = lambda replica: REPLICA_HEALTHY
        self.broker_healthy: Callable[[], bool] = lambda: True
        self.extra_delivery_delay: Callable[[str, str, int], int] = lambda pub, sub, at: 0
        self.deliver: Callable[[str, Message, int], None] = lambda replica, msg, at: None

    # -- scheduling ---------------------------------------------------------

    def schedule(
        self,
        fire_at: int,
        kind: EventKind,
        target: str,
        payload: dict,
        handler: Callable[["Simulator", Event], None],
    ) -> int:
        if fire_at < self.clock.now:
            raise ScheduleError(f"fire_at {fire_at} is before now {self.clock.now}")
        event = Event(
            id=self._next_event_id,
            fire_at=fire_at,
            target=target,
            kind=kind,
            payload=payload,
            handler=handler,
        )
        self._next_event_id += 1
        heapq.heappush(self._queue, (event.fire_at, event.id, event))
        return event.id

    def pending(self) -> int:
        return len(self._queue)

    def run_until(self, t_end: int) -> list[TraceRecord]:
        """Process every event with fire_at <= t_end; returns the new trace segment."""
        if t_end < self.clock.now:
            raise ScheduleError(f"t_end {t_end} is before now {self.clock.now}")
        start_len = len(self.trace)
        while self._queue and self._queue[0][0] <= t_end:
            _, _, event = heapq.heappop(self._queue)
            self.clock.advance_to(event.fire_at)
            before = len(self.trace)
            event.handler(self, event)
            if len(self.trace) == before:
                # Keep silently-handled events visible in the trace.
                self.trace.append(
                    event.fire_at, "tick", event.target, event.target,
                    {"event_kind": event.kind.value, "event_id": event.id},
                )
        self.clock.advance_to(t_end)
        return self.trace.records[start_len:]

    # -- pub/sub ------------------------------------------------------------

    def subscribe(self, replica: str, pattern: str) -> int:
        key = (replica, pattern)
        existing = self._subs.get(key)
        if existing is not None:
            return existing.id
        sub = Subscription(id=self._next_sub_id, replica=replica, pattern=pattern)
        self._next_sub_id += 1
        self._subs[key] = sub
        return sub.id

    def unsubscribe(self, replica: str, pattern: str) -> bool:
        return self._subs.pop((replica, pattern), None) is not None

    def drop_replica_subscriptions(self, replica: str) -> None:
        for key in [k for k in self._subs if k[0] == replica]:
            del self._subs[key]

    def block_publisher(self, replica: str) -> None:
        self._blocked_publishers.add(replica)

    def subscribers_for(self, topic: str) -> list[Subscription]:
        return [s for s in self._subs.values() if topic_matches(s.pattern, topic)]

    def topic_delay(self, topic: str) -> int:
        for pattern, delay in self.topic_delays.items():
            if topic_matches(pattern, topic):
                return delay
        return self.base_deliver_delay

    def publish(self, topic: str, payload: dict, publisher: str, extra: dict | None = None) -> list[str]:
        """Publish a message; returns the replica ids scheduled to receive it.

        Delivery fan-out is fixed at publish time: matching healthy subscribers,
        and only while the broker service has at least one healthy replica.
        """
        now = self.clock.now
        msg = Message(
            topic=topic,
            payload=payload,
            publisher=publisher,
            published_at=now,
            deliver_delay=self.topic_delay(topic),
            id=self._next_message_id,
        )
        self._next_message_id += 1
        record = {"topic": topic, "message_id": msg.id, "payload": payload}
        if extra:
            record.update(extra)

        state = self.replica_state(publisher)
        if state != REPLICA_HEALTHY:
            self.trace.append(now, "anomaly", publisher, topic,
                              dict(record, reason=f"publish from {state or 'unknown'} replica"))
            return []
        if publisher in self._blocked_publishers:
            self.trace.append(now, "blocked", publisher, topic, record)
            return []
        if not self.broker_healthy():
            self.trace.append(now, "drop", publisher, topic, dict(record, reason="broker unavailable"))
            return []

        self.trace.append(now, "publish", publisher, topic, record)
        delivered: list[str] = []
        for sub in sorted(self.subscribers_for(topic), key=lambda s: s.id):
            if self.replica_state(sub.replica) != REPLICA_HEALTHY:
                continue
            if sub.replica == publisher:
                continue
            delay = msg.deliver_delay
            delay += self.extra_delivery_delay(publisher, sub.replica, now)
            self.schedule(
                now + delay,
                EventKind.MESSAGE_DELIVERY,
                sub.replica,
                {"message_id": msg.id, "topic": topic},
                lambda sim, ev, m=msg, r=sub.replica: self._on_delivery(m, r, ev),
            )
            delivered.append(sub.replica)
        return delivered

    def _on_delivery(self, msg: Message, replica: str, event: Event) -> None:
        now = self.clock.now
        state = self.replica_state(replica)
        data = {
            "topic": msg.topic,
            "message_id": msg.id,
            "published_at": msg.published_at,
            "publisher": msg.publisher,
        }
        if state != REPLICA_HEALTHY:
            self.trace.append(now, "delivery-dead", msg.publisher, replica, data)
            return
        self.trace.append(now, "delivery", msg.publisher, replica, data)
        self.deliver(replica, msg, now)
