"""Unit conversions and the fixed physical constants.

Everything internal is SI-ish: meters, hours, m³/h for flow, kW / kWh for
power and energy. Conversions are single multiplications so that a
round-trip (e.g. GPM → m³/h → GPM) stays within a couple of ulps.
"""

RHO = 1000.0  # kg/m³, water density used throughout
G = 9.81      # m/s², gravitational acceleration used throughout

FT_TO_M = 0.3048
IN_TO_M = 0.0254

# 1 US gallon = 3.785411784 L exactly.
GPM_TO_M3H = 60.0 * 3.785411784e-3
LPS_TO_M3H = 3.6

# Pressure head of one psi in meters of water.
PSI_TO_M = 6894.757293168361 / (RHO * G)

HP_TO_KW = 0.7456998715822702

M3H_TO_M3S = 1.0 / 3600.0

# kWh obtained from rho*g*V*H with V in m³ and H in m: rho*g/3.6e6.
KWH_PER_M4 = RHO * G / 3.6e6
