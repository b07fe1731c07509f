"""Episode environment: demand sampling, state assembly, and the step loop.

One step = one passenger assignment followed by a dt_min advance of the
airside. Once demand is exhausted the final step keeps advancing until every
passenger is delivered, so episode metrics always cover the full population.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import airside, world
from .world import Node, Point

DEFAULT_ENERGY_PER_KM = 80.0 / (2 * 27 * math.sqrt(2))  # longest default round trip draws 80 units
DEFAULT_BASE_DENSITY = 100.0 / math.e  # free flow on an empty corridor

SAMPLE_TRY_CAP = 100_000
DRAIN_STEP_CAP = 500_000


@dataclass(frozen=True)
class VertiportSpec:
    id: int
    x: float
    y: float
    evtols: int = 0
    charge_rate: float = 0.0
    landing_only: bool = False

    @property
    def position(self) -> Point:
        return Point(self.x, self.y)


DEFAULT_VERTIPORTS = (
    VertiportSpec(id=0, x=0.0, y=0.0, evtols=3, charge_rate=8.0),
    VertiportSpec(id=1, x=10.0, y=10.0, evtols=1, charge_rate=3.0),
    VertiportSpec(id=2, x=27.0, y=27.0, landing_only=True),
)


@dataclass
class EnvConfig:
    extent_km: float = 30.0
    cell_km: float = 1.0
    blocked: Tuple[Node, ...] = ()
    dt_min: float = 4.0
    horizon_steps: int = 600
    total_passengers: int = 300
    seats: int = 3
    frame_history: int = 6
    tt_eps_min: float = 0.0
    od_min_km: float = 42.0
    od_max_km: float = 48.0
    urban_center_vp: int = 1
    urban_radius_km: float = 6.0
    suburban_center_vp: int = 0
    suburban_min_km: float = 6.0
    suburban_max_km: float = 12.0
    v_max_kmh: float = 60.0
    jam_density: float = 100.0
    base_density: float = DEFAULT_BASE_DENSITY
    load_per_passenger: float = 0.8
    cruise_kmh: float = 120.0
    battery_max: float = 100.0
    energy_per_km: float = DEFAULT_ENERGY_PER_KM
    serv_window_min: float = 120.0
    dispatch_timeout_min: Optional[float] = None
    vertiports: Tuple[VertiportSpec, ...] = DEFAULT_VERTIPORTS
    ground_mode: bool = False
    queue_norm: float = 50.0
    enroute_norm: float = 20.0

    def __post_init__(self):
        if self.dt_min <= 0:
            raise ValueError(f"dt_min must be positive, got {self.dt_min}")
        if self.horizon_steps <= 0:
            raise ValueError(f"horizon_steps must be positive, got {self.horizon_steps}")
        if self.total_passengers <= 0:
            raise ValueError(f"total_passengers must be positive, got {self.total_passengers}")
        if self.total_passengers > self.horizon_steps:
            raise ValueError("total_passengers must fit within horizon_steps "
                             "(one request per step)")
        if self.seats <= 0:
            raise ValueError(f"seats must be positive, got {self.seats}")
        if self.frame_history <= 0:
            raise ValueError(f"frame_history must be positive, got {self.frame_history}")
        if self.tt_eps_min < 0:
            raise ValueError(f"tt_eps_min must be non-negative, got {self.tt_eps_min}")
        if not (0 < self.od_min_km <= self.od_max_km):
            raise ValueError("od_min_km/od_max_km must satisfy 0 < min <= max")
        if self.v_max_kmh <= 0 or self.cruise_kmh <= 0:
            raise ValueError("speeds must be positive")
        if self.jam_density <= 0 or self.base_density <= 0:
            raise ValueError("densities must be positive")
        if self.base_density > self.jam_density:
            raise ValueError("base_density must not exceed jam_density")
        if self.load_per_passenger < 0:
            raise ValueError("load_per_passenger must be non-negative")
        if self.battery_max <= 0 or self.energy_per_km <= 0:
            raise ValueError("battery_max and energy_per_km must be positive")
        if self.serv_window_min <= 0:
            raise ValueError("serv_window_min must be positive")
        if self.dispatch_timeout_min is not None and self.dispatch_timeout_min <= 0:
            raise ValueError("dispatch_timeout_min must be positive when set")

        ids = [v.id for v in self.vertiports]
        if len(set(ids)) != len(ids):
            raise ValueError("vertiport ids must be unique")
        landing = [v for v in self.vertiports if v.landing_only]
        departs = [v for v in self.vertiports if not v.landing_only]
        if len(landing) != 1:
            raise ValueError(f"exactly one landing-only vertiport required, got {len(landing)}")
        if not departs:
            raise ValueError("at least one departure vertiport required")
        for v in self.vertiports:
            if not (0 <= v.x <= self.extent_km and 0 <= v.y <= self.extent_km):
                raise ValueError(f"vertiport {v.id} lies outside the map")
            if v.evtols < 0:
                raise ValueError(f"vertiport {v.id} has negative fleet")
            if not v.landing_only and v.evtols > 0 and v.charge_rate <= 0:
                raise ValueError(f"vertiport {v.id} hosts eVTOLs but has no charge rate")
        if not self.ground_mode and sum(v.evtols for v in departs) == 0:
            raise ValueError("no eVTOLs anywhere; air service is impossible")
        dep_ids = {v.id for v in departs}
        for name, ref in (("urban_center_vp", self.urban_center_vp),
                          ("suburban_center_vp", self.suburban_center_vp)):
            if ref not in dep_ids:
                raise ValueError(f"{name} {ref} is not a departure vertiport")
        land = landing[0]
        for v in departs:
            round_trip = 2 * world.euclidean_km(v.position, land.position) * self.energy_per_km
            if round_trip > self.battery_max + 1e-9:
                raise ValueError(
                    f"vertiport {v.id} round trip needs {round_trip:.2f} battery units, "
                    f"exceeding battery_max {self.battery_max}")


@dataclass
class Passenger:
    id: int
    origin: Point
    dest: Point
    origin_node: Node
    dest_node: Node
    t_request: float
    departure_vp: Optional[int] = None
    t_enqueue: Optional[float] = None
    t_board: Optional[float] = None
    t_alight: Optional[float] = None
    t_delivered: Optional[float] = None
    ground1_min: float = 0.0
    ground2_min: float = 0.0

    @property
    def delivered(self) -> bool:
        return self.t_delivered is not None


def passenger_times(p: Passenger, tt_eps_min: float) -> Dict[str, float]:
    """Decompose one delivered trip into wait/ground/air/total minutes."""
    if not p.delivered:
        raise ValueError(f"passenger {p.id} is not delivered yet")
    if p.t_board is None:  # ground-mode trip
        wait = 0.0
        air = 0.0
        grd = p.ground1_min
    else:
        wait = p.t_board - p.t_enqueue
        air = p.t_alight - p.t_board
        grd = p.ground1_min + p.ground2_min
    total = p.t_delivered - p.t_request + tt_eps_min
    return {"wait": wait, "air": air, "ground": grd,
            "evtol": grd + air + tt_eps_min, "total": total}


@dataclass
class PortView:
    """Physical-unit snapshot of one departure vertiport, as policies see it."""

    id: int
    ground_km: float
    ground_min: float
    air_km: float
    air_min: float
    queue_len: int
    enroute: int
    serv_rate: float
    charge_rate: float


@dataclass
class StateView:
    origin: Point
    dest: Point
    ports: List[PortView]


class MobilityEnv:
    """Deterministic vertiport-selection MDP over the air-ground network."""

    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg
        self.net = world.build_grid_network(cfg.extent_km, cfg.cell_km, cfg.blocked)
        self.landing_spec = next(v for v in cfg.vertiports if v.landing_only)
        self.dep_specs = sorted((v for v in cfg.vertiports if not v.landing_only),
                                key=lambda v: v.id)
        self.landing_node = world.snap_to_node(self.net, self.landing_spec.position)
        self.dep_nodes = [world.snap_to_node(self.net, v.position) for v in self.dep_specs]
        self.fields = [world.distance_field(self.net, n) for n in self.dep_nodes]
        self.landing_field = world.distance_field(self.net, self.landing_node)
        self.air_km = [world.euclidean_km(v.position, self.landing_spec.position)
                       for v in self.dep_specs]
        self.rate_norm = max((v.charge_rate for v in self.dep_specs), default=1.0) or 1.0
        self.fleet_size = sum(v.evtols for v in self.dep_specs)
        self.n_actions = len(self.dep_specs)
        self.frame_width = 4 + 7 * len(self.dep_specs) + 3 * self.fleet_size
        self.nominal_rates = [self._nominal_service_rate(i) for i in range(len(self.dep_specs))]

    def _nominal_service_rate(self, port_idx: int) -> float:
        """Expected passengers/min a port can serve: fleet * seats / full cycle."""
        cfg = self.cfg
        spec = self.dep_specs[port_idx]
        if spec.evtols == 0:
            return 0.0
        round_km = 2 * self.air_km[port_idx]
        cycle = 60.0 * round_km / cfg.cruise_kmh + round_km * cfg.energy_per_km / spec.charge_rate
        if cycle <= 0:
            return 0.0
        return spec.evtols * cfg.seats / cycle

    # -- episode lifecycle -------------------------------------------------

    def reset(self, seed: int) -> np.ndarray:
        cfg = self.cfg
        self.rng = np.random.default_rng(seed)
        self.passengers = [self._sample_passenger(i) for i in range(cfg.total_passengers)]
        self.ports = [airside.Vertiport(id=v.id, position=v.position,
                                        charge_rate=v.charge_rate)
                      for v in self.dep_specs]
        self.fleet = []
        eid = 0
        for v in self.dep_specs:
            for _ in range(v.evtols):
                self.fleet.append(airside.Evtol(id=eid, home=v.id, position=v.position,
                                                battery=cfg.battery_max))
                eid += 1
        self.windows = [airside.DepartureWindow(cfg.serv_window_min) for _ in self.dep_specs]
        self.now = 0.0
        self.step_idx = 0
        self.enroute = [0] * len(self.dep_specs)
        self.delivered_count = 0
        self.active = 0  # arrived and not yet delivered
        self.sum_accrued = 0.0
        self.last_mean = 0.0
        self._enqueue_heap: List[Tuple[float, int]] = []
        self._delivery_heap: List[Tuple[float, int]] = []
        self._frames: List[np.ndarray] = []
        self.trace: List[dict] = []
        self._port_index = {v.id: i for i, v in enumerate(self.dep_specs)}
        self._specs_by_id = {v.id: v for v in self.dep_specs}
        self._push_frame()
        return self.state_stack()

    def _sample_passenger(self, pid: int) -> Passenger:
        cfg = self.cfg
        urban_c = next(v.position for v in self.dep_specs if v.id == cfg.urban_center_vp)
        sub_c = next(v.position for v in self.dep_specs if v.id == cfg.suburban_center_vp)
        tries = 0
        while tries <= SAMPLE_TRY_CAP:
            tries += 1
            urban = bool(self.rng.integers(0, 2))
            ox, oy = self.rng.uniform(0, cfg.extent_km, 2)
            o = Point(float(ox), float(oy))
            if urban:
                if world.euclidean_km(o, urban_c) > cfg.urban_radius_km:
                    continue
            else:
                d0 = world.euclidean_km(o, sub_c)
                if not (cfg.suburban_min_km <= d0 <= cfg.suburban_max_km):
                    continue
            o_node = world.snap_to_node(self.net, o)
            dest, spent = self._sample_destination(o_node)
            tries += spent
            if dest is None:
                continue
            d, d_node = dest
            return Passenger(id=pid, origin=o, dest=d, origin_node=o_node,
                             dest_node=d_node, t_request=pid * cfg.dt_min)
        raise ValueError("demand sampling failed; O-D constraints look unsatisfiable")

    def _sample_destination(self, o_node: Node) -> Tuple[Optional[Tuple[Point, Node]], int]:
        if self.net.blocked:
            return self._sample_destination_scalar(o_node)
        # Unblocked fast path: batched draws, first acceptance wins. Same law
        # as one-at-a-time rejection, far fewer python-level iterations.
        cfg = self.cfg
        lx, ly = self.landing_spec.position.x, self.landing_spec.position.y
        batch = 128
        for n_batch in range(2):
            pts = self.rng.uniform(0, cfg.extent_km, (batch, 2))
            to_land = np.hypot(pts[:, 0] - lx, pts[:, 1] - ly)
            in_catchment = np.ones(batch, dtype=bool)
            for v in self.dep_specs:
                d_v = np.hypot(pts[:, 0] - v.x, pts[:, 1] - v.y)
                in_catchment &= d_v > to_land
            ii = np.clip(np.ceil(pts[:, 0] / cfg.cell_km - 0.5), 0, self.net.side).astype(int)
            jj = np.clip(np.ceil(pts[:, 1] / cfg.cell_km - 0.5), 0, self.net.side).astype(int)
            od = (np.abs(ii - o_node[0]) + np.abs(jj - o_node[1])) * cfg.cell_km
            ok = in_catchment & (od >= cfg.od_min_km) & (od <= cfg.od_max_km)
            hits = np.flatnonzero(ok)
            if hits.size:
                i = int(hits[0])
                d = Point(float(pts[i, 0]), float(pts[i, 1]))
                return (d, (int(ii[i]), int(jj[i]))), n_batch * batch + i + 1
        return None, 2 * batch

    def _sample_destination_scalar(self, o_node: Node) -> Tuple[Optional[Tuple[Point, Node]], int]:
        cfg = self.cfg
        land = self.landing_spec.position
        for i in range(200):
            dx, dy = self.rng.uniform(0, cfg.extent_km, 2)
            d = Point(float(dx), float(dy))
            to_land = world.euclidean_km(d, land)
            if any(world.euclidean_km(d, v.position) <= to_land for v in self.dep_specs):
                continue
            d_node = world.snap_to_node(self.net, d)
            if cfg.od_min_km <= self._grid_km(o_node, d_node) <= cfg.od_max_km:
                return (d, d_node), i + 1
        return None, 200

    def _grid_km(self, a: Node, b: Node) -> float:
        if not self.net.blocked:
            return (abs(a[0] - b[0]) + abs(a[1] - b[1])) * self.cfg.cell_km
        return world.distance_field(self.net, a)[b]

    # -- state views -------------------------------------------------------

    def focal(self) -> Optional[Passenger]:
        if self.step_idx < self.cfg.total_passengers:
            return self.passengers[self.step_idx]
        return None

    def state_view(self) -> StateView:
        p = self.focal()
        if p is None:
            raise ValueError("no passenger awaiting assignment")
        ports = []
        for i, spec in enumerate(self.dep_specs):
            g_km = self.fields[i][p.origin_node]
            v_est = self._access_speed(i, self.enroute[i] + 1)
            observed = self.windows[i].mean_per_min(self.now)
            if observed > 0:
                serv = airside.service_rate(observed, self.cfg.seats)
            else:
                # No departures in the window yet: project from the nominal cycle.
                serv = self.nominal_rates[i]
            ports.append(PortView(
                id=spec.id,
                ground_km=g_km,
                ground_min=world.ground_travel_time_min(g_km, v_est) if v_est > 0 else float("inf"),
                air_km=self.air_km[i],
                air_min=60.0 * self.air_km[i] / self.cfg.cruise_kmh,
                queue_len=len(self.ports[i].queue),
                enroute=self.enroute[i],
                serv_rate=serv,
                charge_rate=spec.charge_rate,
            ))
        return StateView(origin=p.origin, dest=p.dest, ports=ports)

    def _access_speed(self, port_idx: int, en_route: int) -> float:
        cfg = self.cfg
        k = world.corridor_density(cfg.base_density, cfg.load_per_passenger,
                                   en_route, cfg.jam_density)
        return world.greenberg_speed(cfg.v_max_kmh, cfg.jam_density, k)

    def _frame(self) -> np.ndarray:
        cfg = self.cfg
        vals = []
        p = self.focal()
        if p is None:
            vals.extend([0.0, 0.0, 0.0, 0.0])
        else:
            vals.extend([p.origin.x / cfg.extent_km, p.origin.y / cfg.extent_km,
                         p.dest.x / cfg.extent_km, p.dest.y / cfg.extent_km])
        for i, spec in enumerate(self.dep_specs):
            g_km = self.fields[i][p.origin_node] if p is not None else 0.0
            v_est = self._access_speed(i, self.enroute[i] + 1)
            vals.extend([
                g_km / (2 * cfg.extent_km),
                v_est / cfg.v_max_kmh,
                self.enroute[i] / cfg.enroute_norm,
                len(self.ports[i].queue) / cfg.queue_norm,
                spec.x / cfg.extent_km,
                spec.y / cfg.extent_km,
                spec.charge_rate / self.rate_norm,
            ])
        for e in self.fleet:
            vals.extend([e.speed_kmh / cfg.cruise_kmh,
                         len(e.onboard) / cfg.seats,
                         e.battery / cfg.battery_max])
        return np.asarray(vals, dtype=np.float64)

    def _push_frame(self) -> None:
        self._frames.append(self._frame())
        if len(self._frames) > self.cfg.frame_history:
            self._frames.pop(0)

    def state_stack(self) -> np.ndarray:
        """Latest frame_history frames, oldest first, zero-padded at the front."""
        K = self.cfg.frame_history
        stack = np.zeros((K, self.frame_width), dtype=np.float64)
        for row, f in enumerate(self._frames[-K:], start=K - len(self._frames[-K:])):
            stack[row] = f
        return stack

    # -- dynamics ----------------------------------------------------------

    def step(self, action: int) -> Tuple[np.ndarray, float, bool, dict]:
        p = self.focal()
        if p is None:
            raise ValueError("step called with no passenger awaiting assignment")
        t0 = self.now
        if self.cfg.ground_mode:
            self._assign_ground(p, t0)
        else:
            if not (0 <= action < self.n_actions):
                raise ValueError(f"action {action} out of range 0..{self.n_actions - 1}")
            self._assign(p, action, t0)
        reward = self._advance_window(t0, t0 + self.cfg.dt_min)
        self.step_idx += 1
        self.now = t0 + self.cfg.dt_min

        if self.focal() is None:
            drained = 0
            while self.delivered_count < self.cfg.total_passengers:
                reward += self._advance_window(self.now, self.now + self.cfg.dt_min)
                self.now += self.cfg.dt_min
                drained += 1
                if drained > DRAIN_STEP_CAP:
                    raise RuntimeError("episode failed to drain; passengers stuck undelivered")
        done = self.delivered_count == self.cfg.total_passengers
        self._push_frame()
        info = {"t": self.now, "delivered": self.delivered_count, "assigned": self.step_idx}
        return self.state_stack(), reward, done, info

    def _assign(self, p: Passenger, action: int, t0: float) -> None:
        idx = action
        spec = self.dep_specs[idx]
        g_km = self.fields[idx][p.origin_node]
        speed = self._access_speed(idx, self.enroute[idx] + 1)
        g_min = world.ground_travel_time_min(g_km, speed)
        p.departure_vp = spec.id
        p.ground1_min = g_min
        p.t_enqueue = t0 + g_min
        self.enroute[idx] += 1
        self.active += 1
        heapq.heappush(self._enqueue_heap, (p.t_enqueue, p.id))
        self.trace.append({"kind": "assign", "step": self.step_idx, "t": t0,
                           "passenger": p.id, "vertiport": spec.id})

    def _assign_ground(self, p: Passenger, t0: float) -> None:
        speed = world.greenberg_speed(self.cfg.v_max_kmh, self.cfg.jam_density,
                                      self.cfg.base_density)
        g_km = self._grid_km(p.origin_node, p.dest_node)
        g_min = world.ground_travel_time_min(g_km, speed)
        p.ground1_min = g_min
        self.active += 1
        heapq.heappush(self._delivery_heap, (t0 + g_min, p.id))
        self.trace.append({"kind": "assign", "step": self.step_idx, "t": t0,
                           "passenger": p.id, "vertiport": -1})

    def _advance_window(self, t0: float, t1: float) -> float:
        """Advance airside through [t0, t1] and return the reward increment."""
        cfg = self.cfg
        walk: List[Tuple[float, int, str, object]] = []  # (t, seq, kind, payload)
        seq = 0

        while self._enqueue_heap and self._enqueue_heap[0][0] <= t1 + 1e-12:
            t_enq, pid = heapq.heappop(self._enqueue_heap)
            heapq.heappush(walk, (t_enq, seq, "enqueue", pid))
            seq += 1

        for e in self.fleet:
            home = self._specs_by_id[e.home]
            for kind, t_ev, pax in airside.advance_evtol(
                    e, t0, t1, cfg.energy_per_km, home.charge_rate, cfg.battery_max,
                    home.position, cfg.cruise_kmh):
                if kind == "alight":
                    for pid in pax:
                        heapq.heappush(walk, (t_ev, seq, "alight", pid))
                        seq += 1
                elif kind == "home":
                    heapq.heappush(walk, (t_ev, seq, "home", e.id))
                    seq += 1

        while self._delivery_heap and self._delivery_heap[0][0] <= t1 + 1e-12:
            t_del, pid = heapq.heappop(self._delivery_heap)
            heapq.heappush(walk, (t_del, seq, "deliver", pid))
            seq += 1

        # Accrual walk: active trip time integrates between ordered events.
        t_cur = t0
        arrivals_per_port = [0] * len(self.dep_specs)
        while walk:
            t_ev, _, kind, payload = heapq.heappop(walk)
            self.sum_accrued += self.active * (t_ev - t_cur)
            t_cur = t_ev
            if kind == "enqueue":
                p = self.passengers[payload]
                idx = self._port_index[p.departure_vp]
                self.ports[idx].enqueue(p.id)
                self.enroute[idx] -= 1
                arrivals_per_port[idx] += 1
                self.trace.append({"kind": "enqueue", "step": self.step_idx, "t": t_ev,
                                   "passenger": p.id, "vertiport": p.departure_vp})
            elif kind == "alight":
                p = self.passengers[payload]
                p.t_alight = t_ev
                g_km = self.landing_field[p.dest_node]
                speed = world.greenberg_speed(cfg.v_max_kmh, cfg.jam_density, cfg.base_density)
                p.ground2_min = world.ground_travel_time_min(g_km, speed)
                self.trace.append({"kind": "alight", "step": self.step_idx, "t": t_ev,
                                   "passenger": p.id, "vertiport": self.landing_spec.id})
                t_del = t_ev + p.ground2_min
                if t_del <= t1 + 1e-12:
                    heapq.heappush(walk, (t_del, seq, "deliver", p.id))
                    seq += 1
                else:
                    heapq.heappush(self._delivery_heap, (t_del, p.id))
            elif kind == "deliver":
                self._deliver(self.passengers[payload], t_ev)
            elif kind == "home":
                self.trace.append({"kind": "return", "step": self.step_idx, "t": t_ev,
                                   "evtol": payload})
        self.sum_accrued += self.active * (t1 - t_cur)

        departures = self._dispatch_all(t1)
        arrived = min(self.step_idx + 1, cfg.total_passengers)
        mean_now = self.sum_accrued / arrived if arrived else 0.0
        reward = -(mean_now - self.last_mean)
        self.last_mean = mean_now
        self.trace.append({
            "kind": "step", "step": self.step_idx, "t": t1,
            "queues": [len(port.queue) for port in self.ports],
            "enroute": list(self.enroute),
            "phases": [e.phase for e in self.fleet],
            "arrivals": arrivals_per_port,
            "boarded": departures,
            "reward": reward,
        })
        return reward

    def _deliver(self, p: Passenger, t_ev: float) -> None:
        p.t_delivered = t_ev
        self.active -= 1
        self.delivered_count += 1
        self.sum_accrued += self.cfg.tt_eps_min
        self.trace.append({"kind": "deliver", "step": self.step_idx, "t": t_ev,
                           "passenger": p.id})

    def _dispatch_all(self, t1: float) -> List[int]:
        """Boundary dispatch for every departure port; returns boarded counts."""
        cfg = self.cfg
        boarded = [0] * len(self.dep_specs)
        if cfg.ground_mode:
            return boarded
        exhausted = self.step_idx + 1 >= cfg.total_passengers
        for i, port in enumerate(self.ports):
            allow_partial = exhausted and self.enroute[i] == 0 and 0 < len(port.queue) < cfg.seats
            if not allow_partial and cfg.dispatch_timeout_min is not None and port.queue:
                head = self.passengers[port.queue[0]]
                allow_partial = t1 - head.t_enqueue >= cfg.dispatch_timeout_min
            for eid, pax in airside.try_dispatch(port, self.fleet, cfg.seats, t1,
                                                 self.landing_spec.position, cfg.cruise_kmh,
                                                 allow_partial=allow_partial):
                self.windows[i].record(t1)
                boarded[i] += len(pax)
                for pid in pax:
                    self.passengers[pid].t_board = t1
                self.trace.append({"kind": "board", "step": self.step_idx, "t": t1,
                                   "evtol": eid, "passengers": list(pax),
                                   "vertiport": port.id})
        return boarded


def episode_cost(env: MobilityEnv) -> float:
    """Sum of realized total travel times after an episode has drained."""
    return sum(passenger_times(p, env.cfg.tt_eps_min)["total"] for p in env.passengers)


def run_fixed_assignments(cfg: EnvConfig, seed: int, actions: Sequence[int],
                          env: Optional[MobilityEnv] = None) -> float:
    if env is None:
        env = MobilityEnv(cfg)
    env.reset(seed)
    done = False
    for a in actions:
        if done:
            raise ValueError("action sequence longer than the episode")
        _, _, done, _ = env.step(a)
    if not done:
        raise ValueError("action sequence shorter than the episode")
    return episode_cost(env)


def brute_force_best_assignment(cfg: EnvConfig, seed: int) -> Tuple[float, Tuple[int, ...]]:
    """Exhaustively minimize total travel time over every assignment vector.

    Only tractable for tiny instances; guarded to <= 6 passengers.
    """
    if cfg.total_passengers > 6:
        raise ValueError("brute force is limited to 6 passengers")
    n_actions = len([v for v in cfg.vertiports if not v.landing_only])
    best_cost = float("inf")
    best_seq: Tuple[int, ...] = ()
    env = MobilityEnv(cfg)
    import itertools

    for seq in itertools.product(range(n_actions), repeat=cfg.total_passengers):
        cost = run_fixed_assignments(cfg, seed, seq, env=env)
        if cost < best_cost - 1e-12:
            best_cost = cost
            best_seq = seq
    return best_cost, best_seq
