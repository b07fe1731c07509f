"""Vertiport queues and the eVTOL lifecycle.

Timing is timetable-driven: each flight leg stores its departure/arrival
minute, so arrivals, returns, and charge completions land on exact fractional
times no matter how the surrounding step grid is laid out.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Deque, List, Optional, Tuple

from .world import Point, euclidean_km

# Wait reported for a vertiport whose observed service rate is zero.
WAIT_SENTINEL_MIN = 1e6

PHASES = ("charging", "idle", "boarding", "flying", "returning")
_NEXT_PHASE = {
    "charging": ("idle",),
    "idle": ("boarding",),
    "boarding": ("flying",),
    "flying": ("returning",),
    "returning": ("charging",),
}


@dataclass
class Vertiport:
    """A take-off/landing site. Queue holds passenger ids in FCFS order."""

    id: int
    position: Point
    landing_only: bool = False
    charge_rate: float = 0.0
    queue: List[int] = field(default_factory=list)

    def enqueue(self, passenger_id: int) -> None:
        if self.landing_only:
            raise ValueError(f"vertiport {self.id} is landing-only and has no departure queue")
        self.queue.append(passenger_id)


@dataclass
class Evtol:
    id: int
    home: int
    position: Point
    battery: float
    phase: str = "idle"
    speed_kmh: float = 0.0
    onboard: List[int] = field(default_factory=list)
    # Active leg timetable; meaningful while flying or returning.
    leg_origin: Optional[Point] = None
    leg_target: Optional[Point] = None
    leg_depart_min: float = 0.0
    leg_arrive_min: float = 0.0
    leg_km: float = 0.0
    leg_battery_start: float = 0.0


def set_phase(e: Evtol, phase: str) -> None:
    if phase not in _NEXT_PHASE[e.phase]:
        raise ValueError(f"evtol {e.id}: illegal phase change {e.phase} -> {phase}")
    e.phase = phase


def queue_update(queue_len: int, n_arrivals: int, n_departures: int, seats: int) -> int:
    """Queue recurrence: arrivals add, each departure removes a full load."""
    if min(queue_len, n_arrivals, n_departures) < 0:
        raise ValueError("queue_update arguments must be non-negative")
    if seats <= 0:
        raise ValueError(f"seats must be positive, got {seats}")
    return max(queue_len + n_arrivals - n_departures * seats, 0)


def service_rate(mean_departures_per_min: float, seats: int) -> float:
    """Passengers served per minute given a mean departure rate."""
    if mean_departures_per_min < 0:
        raise ValueError("mean_departures_per_min must be non-negative")
    if seats <= 0:
        raise ValueError(f"seats must be positive, got {seats}")
    return mean_departures_per_min * seats


def estimated_wait(queue_len: float, serv_rate: float) -> float:
    """Projected queueing delay in minutes; sentinel when no service observed."""
    if queue_len < 0:
        raise ValueError("queue_len must be non-negative")
    if serv_rate <= 0:
        return WAIT_SENTINEL_MIN
    return queue_len / serv_rate


class DepartureWindow:
    """Trailing record of departure events used to estimate the service rate."""

    def __init__(self, window_min: float):
        if window_min <= 0:
            raise ValueError(f"window_min must be positive, got {window_min}")
        self.window_min = window_min
        self._events: Deque[float] = deque()

    def record(self, t_min: float) -> None:
        self._events.append(t_min)

    def mean_per_min(self, now_min: float) -> float:
        cutoff = now_min - self.window_min
        while self._events and self._events[0] <= cutoff:
            self._events.popleft()
        span = min(now_min, self.window_min)
        if span <= 0:
            return 0.0
        span = max(span, 1.0)
        return len(self._events) / span


def begin_flight(e: Evtol, origin: Point, target: Point, cruise_kmh: float,
                 depart_min: float) -> None:
    if cruise_kmh <= 0:
        raise ValueError(f"cruise_kmh must be positive, got {cruise_kmh}")
    e.leg_origin = origin
    e.leg_target = target
    e.leg_km = euclidean_km(origin, target)
    e.leg_depart_min = depart_min
    e.leg_arrive_min = depart_min + 60.0 * e.leg_km / cruise_kmh
    e.leg_battery_start = e.battery
    e.speed_kmh = cruise_kmh
    e.position = origin


def try_dispatch(port: Vertiport, evtols: List[Evtol], seats: int, now_min: float,
                 landing: Point, cruise_kmh: float,
                 allow_partial: bool = False) -> List[Tuple[int, List[int]]]:
    """Board and launch as many full loads as the stationed fleet allows.

    Returns (evtol_id, passenger_ids) per departure. With allow_partial the
    last stranded fragment (< seats, only possible once arrivals have dried
    up) may leave below capacity.
    """
    if port.landing_only:
        return []
    departures: List[Tuple[int, List[int]]] = []
    ready = sorted(
        (e for e in evtols if e.home == port.id and e.phase == "idle"),
        key=lambda e: e.id,
    )
    for e in ready:
        if not port.queue:
            break
        if len(port.queue) < seats and not allow_partial:
            break
        load = port.queue[: min(seats, len(port.queue))]
        del port.queue[: len(load)]
        set_phase(e, "boarding")
        e.onboard = list(load)
        set_phase(e, "flying")
        begin_flight(e, port.position, landing, cruise_kmh, now_min)
        departures.append((e.id, list(load)))
    return departures


def advance_evtol(e: Evtol, t0: float, t1: float, energy_per_km: float,
                  charge_rate: float, battery_max: float,
                  home_position: Point, cruise_kmh: float) -> List[Tuple[str, float, List[int]]]:
    """Advance one eVTOL through [t0, t1], chaining phase changes at exact times.

    Emits ("alight", t, passenger_ids) on arrival at the landing site,
    ("home", t, []) on touchdown at the home pad, ("ready", t, []) when the
    battery refills. Time left over after an event rolls into the next phase.
    """
    events: List[Tuple[str, float, List[int]]] = []
    t = t0
    while t < t1 - 1e-12:
        if e.phase in ("flying", "returning"):
            if e.leg_arrive_min <= t1 + 1e-12:
                arrive = e.leg_arrive_min
                e.battery = e.leg_battery_start - e.leg_km * energy_per_km
                e.position = e.leg_target
                e.speed_kmh = 0.0
                if e.phase == "flying":
                    pax = list(e.onboard)
                    e.onboard = []
                    events.append(("alight", arrive, pax))
                    set_phase(e, "returning")
                    begin_flight(e, e.position, home_position, cruise_kmh, arrive)
                else:
                    events.append(("home", arrive, []))
                    set_phase(e, "charging")
                t = arrive
            else:
                covered = (t1 - e.leg_depart_min) / (e.leg_arrive_min - e.leg_depart_min)
                e.battery = e.leg_battery_start - covered * e.leg_km * energy_per_km
                e.position = Point(
                    e.leg_origin.x + covered * (e.leg_target.x - e.leg_origin.x),
                    e.leg_origin.y + covered * (e.leg_target.y - e.leg_origin.y),
                )
                t = t1
        elif e.phase == "charging":
            if charge_rate <= 0:
                raise ValueError(f"evtol {e.id} is charging at a non-positive rate")
            full_at = t + (battery_max - e.battery) / charge_rate
            if full_at <= t1 + 1e-12:
                e.battery = battery_max
                set_phase(e, "idle")
                events.append(("ready", full_at, []))
                t = full_at
            else:
                e.battery = min(e.battery + charge_rate * (t1 - t), battery_max)
                t = t1
        else:
            # idle or boarding: nothing evolves on its own
            break
    return events
