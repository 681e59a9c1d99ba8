"""Quadrotor power model and plan energy costing.

Momentum-theory model: total thrust balances weight plus drag, the rotor
induced velocity solves a fixed-point relation, and flight/hover power
follow from thrust times the velocity through the rotor disk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

# 6000 mAh 2S LiPo at nominal 7.4 V
PHANTOM_BATTERY_JOULES = 6.0 * 7.4 * 3600.0

MAX_ITERATIONS = 10_000
RESIDUAL_TOL = 1e-12
DAMPING = 0.5


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class DroneSpec:
    body_mass: float = 1.07
    battery_mass: float = 0.31
    rotor_count: int = 4
    rotor_diameter: float = 0.35
    power_efficiency: float = 0.8
    ground_speed: float = 6.94
    air_density: float = 1.225
    gravity: float = 9.81
    battery_capacity: float = PHANTOM_BATTERY_JOULES
    drag_force: float = 4.1134

    def __post_init__(self) -> None:
        positive = {
            "body_mass": self.body_mass,
            "battery_mass": self.battery_mass,
            "rotor_count": self.rotor_count,
            "rotor_diameter": self.rotor_diameter,
            "power_efficiency": self.power_efficiency,
            "ground_speed": self.ground_speed,
            "air_density": self.air_density,
            "gravity": self.gravity,
            "battery_capacity": self.battery_capacity,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value!r}")
        if self.power_efficiency > 1:
            raise ValueError("power_efficiency must lie in (0, 1]")
        if self.drag_force < 0:
            raise ValueError("drag_force must be non-negative")

    @property
    def total_mass(self) -> float:
        return self.body_mass + self.battery_mass

    @property
    def weight(self) -> float:
        return self.total_mass * self.gravity

    @property
    def disk_term(self) -> float:
        """0.5 * pi * d^2 * r * rho, the momentum-theory disk constant."""
        return 0.5 * math.pi * self.rotor_diameter**2 * self.rotor_count * self.air_density


PROFILES: dict[str, DroneSpec] = {
    "phantom4pro": DroneSpec(),
}


@dataclass(frozen=True)
class FlightRegime:
    thrust: float
    pitch: float
    drag: float
    induced_velocity: float


def _induced_rhs(spec: DroneSpec, thrust: float, pitch: float, vi: float) -> float:
    v = spec.ground_speed
    along = v * math.cos(pitch)
    normal = v * math.sin(pitch) + vi
    return thrust / (spec.disk_term * math.hypot(along, normal))


def induced_residual(spec: DroneSpec, thrust: float, pitch: float, vi: float) -> float:
    """Relative residual |vi - f(vi)| / vi of the induced-velocity relation."""
    return abs(vi - _induced_rhs(spec, thrust, pitch, vi)) / vi


def _hover_induced(spec: DroneSpec, thrust: float) -> float:
    return math.sqrt(thrust / spec.disk_term)


def _bisect(spec: DroneSpec, thrust: float, pitch: float, hi: float) -> float:
    # g(vi) = vi - f(vi) is increasing; g(0+) < 0 and g(hover) >= 0.
    lo = 0.0
    while hi - _induced_rhs(spec, thrust, pitch, hi) < 0:
        hi *= 2.0
    for _ in range(MAX_ITERATIONS):
        mid = 0.5 * (lo + hi)
        if mid - _induced_rhs(spec, thrust, pitch, mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= RESIDUAL_TOL * hi:
            return 0.5 * (lo + hi)
    raise NumericalError("bisection for induced velocity did not converge")


def solve_induced_velocity(spec: DroneSpec, thrust: float, pitch: float) -> float:
    """Solve the induced-velocity fixed point for a given thrust and pitch.

    Damped fixed-point iteration starting from the hover closed form, with a
    bisection fallback if the iterate stalls or oscillates.
    """
    if not thrust > 0:
        raise ValueError("thrust must be positive")
    vi = _hover_induced(spec, thrust)
    prev_step = math.inf
    for _ in range(MAX_ITERATIONS):
        target = _induced_rhs(spec, thrust, pitch, vi)
        step = target - vi
        if abs(step) <= RESIDUAL_TOL * vi:
            return vi
        if abs(step) >= prev_step:
            break
        prev_step = abs(step)
        vi = vi + DAMPING * step
        if vi <= 0:
            break
    else:
        raise NumericalError("induced velocity iteration exceeded 10000 steps")
    return _bisect(spec, thrust, pitch, _hover_induced(spec, thrust))


def flight_regime(spec: DroneSpec) -> FlightRegime:
    pitch = math.atan(spec.drag_force / spec.weight)
    thrust = spec.weight + spec.drag_force
    vi = solve_induced_velocity(spec, thrust, pitch)
    return FlightRegime(thrust=thrust, pitch=pitch, drag=spec.drag_force, induced_velocity=vi)


@lru_cache(maxsize=256)
def forward_power(spec: DroneSpec) -> float:
    """Power in watts for level flight at the spec's ground speed."""
    regime = flight_regime(spec)
    v = spec.ground_speed
    return (v * math.sin(regime.pitch) + regime.induced_velocity) * regime.thrust / spec.power_efficiency


@lru_cache(maxsize=256)
def hover_power(spec: DroneSpec) -> float:
    thrust = spec.weight
    return thrust**1.5 / (spec.power_efficiency * math.sqrt(spec.disk_term))


def plan_energy(spec: DroneSpec, fly_time: float, hover_time: float) -> float:
    """Battery fraction used by ``fly_time`` seconds of flight plus ``hover_time`` of hover.

    Values above 1 mean the plan is infeasible on one charge.
    """
    if fly_time < 0 or hover_time < 0:
        raise ValueError("times must be non-negative")
    return (forward_power(spec) * fly_time + hover_power(spec) * hover_time) / spec.battery_capacity
