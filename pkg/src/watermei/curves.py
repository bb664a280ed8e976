"""Pump head and efficiency curves, including BEP-based reconstruction.

Head curves expose ``gain`` (added head, m, for flow in m³/h), a gradient,
and a shutoff head so the hydraulic solver can linearize them. Efficiency
curves expose ``efficiency``. All curve objects are immutable value types.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import WatermeiError
from .units import G, RHO

EFFICIENCY_FLOOR = 0.10
DEFAULT_BEP_EFFICIENCY = 0.75


@dataclass(frozen=True)
class BepHeadCurve:
    """Dimensionless centrifugal form H(Q) = H_bep * (4/3 - q²/3), q = Q/Q_bep.

    Clamped at zero head for q >= 2. Shutoff head is (4/3) * H_bep.
    """

    bep_flow: float   # m³/h
    bep_head: float   # m

    def gain(self, flow: float) -> float:
        if flow <= 0.0:
            return self.shutoff_head
        q = flow / self.bep_flow
        return max(0.0, self.bep_head * (4.0 / 3.0 - q * q / 3.0))

    def gain_gradient(self, flow: float) -> float:
        """d(gain)/dQ, zero beyond the clamp point."""
        if flow <= 0.0:
            return 0.0
        q = flow / self.bep_flow
        if q >= 2.0:
            return 0.0
        return -self.bep_head * (2.0 * q / 3.0) / self.bep_flow

    @property
    def shutoff_head(self) -> float:
        return self.bep_head * 4.0 / 3.0

    @property
    def max_flow(self) -> float:
        return 2.0 * self.bep_flow

    @property
    def reference_flow(self) -> float:
        return self.bep_flow

    def violations(self) -> list[str]:
        out = []
        if not (self.bep_flow > 0.0):
            out.append("bep_flow must be positive")
        if not (self.bep_head > 0.0):
            out.append("bep_head must be positive")
        return out


@dataclass(frozen=True)
class ConstantPowerHeadCurve:
    """Fixed-power pump: gain = P / (rho*g*Q), capped below ``min_flow``.

    Only used for networks parsed with power-rated pumps, before curve
    reconstruction replaces it.
    """

    power_kw: float
    min_flow: float = 1.0  # m³/h; cap keeps the gain finite near shutoff

    def gain(self, flow: float) -> float:
        q = max(flow, self.min_flow) / 3600.0
        return self.power_kw * 1000.0 / (RHO * G * q)

    def gain_gradient(self, flow: float) -> float:
        if flow <= self.min_flow:
            return 0.0
        q = flow / 3600.0
        return -self.power_kw * 1000.0 / (RHO * G * q * q) / 3600.0

    @property
    def shutoff_head(self) -> float:
        return self.gain(0.0)

    @property
    def max_flow(self) -> float:
        return float("inf")

    @property
    def reference_flow(self) -> float:
        # Flow at which the gain equals 30 m; an arbitrary but stable scale.
        return self.power_kw * 1000.0 / (RHO * G * 30.0) * 3600.0

    def violations(self) -> list[str]:
        if not (self.power_kw > 0.0):
            return ["power_kw must be positive"]
        return []


@dataclass(frozen=True)
class TabularHeadCurve:
    """Piecewise-linear head curve through explicit (flow m³/h, head m) points."""

    points: tuple[tuple[float, float], ...]

    def gain(self, flow: float) -> float:
        pts = self.points
        if flow <= pts[0][0]:
            return pts[0][1]
        for (q0, h0), (q1, h1) in zip(pts, pts[1:]):
            if flow <= q1:
                return h0 + (h1 - h0) * (flow - q0) / (q1 - q0)
        # extrapolate the last segment down to zero head
        (q0, h0), (q1, h1) = pts[-2], pts[-1]
        slope = (h1 - h0) / (q1 - q0)
        return max(0.0, h1 + slope * (flow - q1))

    def gain_gradient(self, flow: float) -> float:
        pts = self.points
        if flow <= pts[0][0]:
            return 0.0
        for (q0, h0), (q1, h1) in zip(pts, pts[1:]):
            if flow <= q1:
                return (h1 - h0) / (q1 - q0)
        (q0, h0), (q1, h1) = pts[-2], pts[-1]
        slope = (h1 - h0) / (q1 - q0)
        if h1 + slope * (flow - q1) <= 0.0:
            return 0.0
        return slope

    @property
    def shutoff_head(self) -> float:
        return self.points[0][1]

    @property
    def max_flow(self) -> float:
        (q0, h0), (q1, h1) = self.points[-2], self.points[-1]
        if h1 <= 0.0:
            return q1
        slope = (h1 - h0) / (q1 - q0)
        return q1 - h1 / slope if slope < 0.0 else float("inf")

    @property
    def reference_flow(self) -> float:
        return self.points[-1][0]

    def violations(self) -> list[str]:
        out = []
        if len(self.points) < 2:
            out.append("head curve needs at least two points")
            return out
        flows = [q for q, _ in self.points]
        heads = [h for _, h in self.points]
        if any(b <= a for a, b in zip(flows, flows[1:])):
            out.append("head curve flows must be strictly increasing")
        if any(b >= a for a, b in zip(heads, heads[1:])):
            out.append("head curve must be strictly decreasing in head")
        if any(q < 0.0 for q in flows) or heads[0] <= 0.0:
            out.append("head curve values out of range")
        return out


@dataclass(frozen=True)
class BepEfficiencyCurve:
    """Efficiency eta(Q) = eta_bep * (2q - q²), clamped to [floor, eta_bep]."""

    bep_flow: float
    bep_efficiency: float
    floor: float = EFFICIENCY_FLOOR

    def efficiency(self, flow: float) -> float:
        q = max(flow, 0.0) / self.bep_flow
        eta = self.bep_efficiency * (2.0 * q - q * q)
        return min(max(eta, self.floor), self.bep_efficiency)

    def violations(self) -> list[str]:
        out = []
        if not (0.0 < self.bep_efficiency <= 1.0):
            out.append("bep_efficiency must be in (0, 1]")
        if not (self.bep_flow > 0.0):
            out.append("bep_flow must be positive")
        if not (0.0 < self.floor <= self.bep_efficiency):
            out.append("efficiency floor must be in (0, bep_efficiency]")
        return out


@dataclass(frozen=True)
class ConstantEfficiency:
    value: float = DEFAULT_BEP_EFFICIENCY

    def efficiency(self, flow: float) -> float:
        return self.value

    def violations(self) -> list[str]:
        if not (0.0 < self.value <= 1.0):
            return ["efficiency must be in (0, 1]"]
        return []


def reconstruct_pump_curves(
    bep_flow: float,
    bep_head: float,
    bep_efficiency: float = DEFAULT_BEP_EFFICIENCY,
) -> tuple[BepHeadCurve, BepEfficiencyCurve]:
    """Build the head and efficiency curves pinned at a best-efficiency point.

    By construction H(bep_flow) = bep_head and eta(bep_flow) = bep_efficiency
    exactly; the head curve is clamped at zero (reached at 2 * bep_flow) and
    the efficiency curve at [EFFICIENCY_FLOOR, bep_efficiency].
    """
    if not (bep_flow > 0.0 and bep_head > 0.0):
        raise WatermeiError("BEP flow and head must be positive")
    if not (0.0 < bep_efficiency <= 1.0):
        raise WatermeiError("BEP efficiency must be in (0, 1]")
    return (
        BepHeadCurve(bep_flow=bep_flow, bep_head=bep_head),
        BepEfficiencyCurve(bep_flow=bep_flow, bep_efficiency=bep_efficiency),
    )
