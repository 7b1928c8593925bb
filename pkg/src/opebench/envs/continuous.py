"""Continuous-state benchmark environments.

States are feature vectors whose last component is the step index t, which
the tile feature maps bin into horizon slices.  Episodes that end early
(goal reached, pole fallen) are padded downstream with the absorbing state.
"""

from __future__ import annotations

import math

import numpy as np

from ..core import State
from .base import Environment


class MountainCarEnv(Environment):
    """Car stuck between two hills; it must pump momentum to climb out.

    Three actions (reverse, coast, forward), reward -1 per step, T=250;
    start position uniform in [-0.6, -0.4] with zero velocity; reaching the
    goal at position 0.5 ends the episode.  Dynamics and bounds are the
    community-standard ones: velocity += 0.001 (a - 1) - 0.0025 cos(3 pos),
    clipped to +/-0.07, with positions confined to [-1.2, 0.6].  (A left
    wall any closer than about -1.1 would make the goal unreachable: a full-
    throttle run from rest at -0.7 tops out near position -0.013.)
    """

    env_id = "mountain-car"
    action_count = 3
    horizon = 250
    position_range = (-1.2, 0.6)
    goal_position = 0.5
    velocity_limit = 0.07
    start_range = (-0.6, -0.4)

    def reset(self, rng: np.random.Generator) -> State:
        lo, hi = self.start_range
        return State(features=(float(lo + (hi - lo) * rng.random()), 0.0, 0.0))

    def step(self, state: State, action: int, rng: np.random.Generator):
        pos, vel, t = state.features
        vel += 0.001 * (action - 1) - 0.0025 * math.cos(3.0 * pos)
        vel = min(max(vel, -self.velocity_limit), self.velocity_limit)
        pos += vel
        lo, hi = self.position_range
        if pos <= lo:
            pos, vel = lo, max(vel, 0.0)
        done = pos >= self.goal_position
        pos = min(pos, hi)
        return State(features=(pos, vel, t + 1.0)), -1.0, done


class CartPoleEnv(Environment):
    """Pole balancing with two actions, reward +1 per step, T=250.

    Documented constants: gravity 9.8, cart mass 1.0, pole mass 0.1, pole
    half-length 0.5, force 10, Euler step 0.02; the episode fails when
    |angle| > 12 degrees or |position| > 2.4.  Initial state components are
    uniform in [-0.05, 0.05].
    """

    env_id = "cart-pole"
    action_count = 2
    horizon = 250
    gravity = 9.8
    cart_mass = 1.0
    pole_mass = 0.1
    half_length = 0.5
    force_mag = 10.0
    tau = 0.02
    angle_limit = 12.0 * math.pi / 180.0
    position_limit = 2.4

    def reset(self, rng: np.random.Generator) -> State:
        x, x_dot, theta, theta_dot = (rng.random(4) - 0.5) * 0.1
        return State(features=(float(x), float(x_dot), float(theta), float(theta_dot), 0.0))

    def step(self, state: State, action: int, rng: np.random.Generator):
        x, x_dot, theta, theta_dot, t = state.features
        force = self.force_mag if action == 1 else -self.force_mag
        total_mass = self.cart_mass + self.pole_mass
        pole_ml = self.pole_mass * self.half_length
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        temp = (force + pole_ml * theta_dot**2 * sin_t) / total_mass
        theta_acc = (self.gravity * sin_t - cos_t * temp) / (
            self.half_length * (4.0 / 3.0 - self.pole_mass * cos_t**2 / total_mass)
        )
        x_acc = temp - pole_ml * theta_acc * cos_t / total_mass
        x += self.tau * x_dot
        x_dot += self.tau * x_acc
        theta += self.tau * theta_dot
        theta_dot += self.tau * theta_acc
        done = abs(x) > self.position_limit or abs(theta) > self.angle_limit
        nxt = State(features=(x, x_dot, theta, theta_dot, t + 1.0))
        return nxt, 1.0, done


def mountain_car() -> MountainCarEnv:
    return MountainCarEnv()


def cart_pole() -> CartPoleEnv:
    return CartPoleEnv()
