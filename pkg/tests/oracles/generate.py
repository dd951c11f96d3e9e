"""Regenerate ``frozen.json`` from implementations that share no code with the package.

Run from the repository root:  python3 tests/oracles/generate.py

Tools: mpmath quadrature / root finding, scipy ``solve_ivp`` (DOP853)
stepped interval by interval for the delay system, and adaptive ``quad``
for the periodic integral operator.  Every instance uses closed-form
coefficients so nothing here touches grids.
"""

import json
import math
from pathlib import Path

import mpmath as mp
import numpy as np
from scipy.integrate import quad, solve_ivp

mp.mp.dps = 30
OUT = Path(__file__).with_name("frozen.json")


def mm(b, k):
    return lambda x: b * x / (1 + k * x) if x > 0 else 0.0


# washout -------------------------------------------------------------------

def washout_y0(d, D, s0, omega):
    num = mp.quad(lambda s: d(s) * mp.e ** D(s) * s0(s), [0, omega / 2, omega])
    return num / (mp.e ** D(omega) - 1)


def washout_at(t, d, D, s0, omega):
    y0 = washout_y0(d, D, s0, omega)
    integral = mp.quad(lambda s: d(s) * mp.e ** (D(s) - D(t)) * s0(s), [0, t]) if t > 0 else 0
    return y0 * mp.e ** (-D(t)) + integral


def washout_cases():
    out = {}
    for a in (1.5, 2.0, 3.7):
        out[f"const_d_a{a}"] = float(washout_y0(lambda s: 1, lambda s: s, lambda s: a + mp.sin(s), 2 * mp.pi))
    d = lambda s: 1 + 0.5 * mp.sin(s)
    D = lambda s: s + 0.5 * (1 - mp.cos(s))
    s0 = lambda s: 2 + mp.sin(s)
    ts = [0.0, 1.0, 2.5, 4.0, 5.5]
    out["var_d"] = {"t": ts, "y": [float(washout_at(mp.mpf(t), d, D, s0, 2 * mp.pi)) for t in ts]}
    return out


# delay system ----------------------------------------------------------------

def dde_reference(d, Dint, s0, responses, taus, hist, t_end, rtol=1e-12, atol=1e-14):
    """Method of steps with DOP853 on windows of length min(tau)."""
    n = len(taus)
    step = min(taus)
    pieces = []

    def state(t):
        if t <= 0:
            return np.asarray(hist, dtype=float)
        for t0, t1, sol in pieces:
            if t0 - 1e-13 <= t <= t1 + 1e-13:
                return sol(t)
        raise RuntimeError(t)

    def rhs(t, u):
        S, x = u[0], u[1:]
        du = np.empty(n + 1)
        du[0] = d(t) * (s0(t) - S) - sum(responses[i](S) * x[i] for i in range(n))
        for i in range(n):
            lag = state(t - taus[i])
            du[i + 1] = -d(t) * x[i] + math.exp(-Dint(t - taus[i], t)) * responses[i](lag[0]) * lag[i + 1]
        return du

    u = np.asarray(hist, dtype=float)
    t = 0.0
    while t < t_end - 1e-12:
        t1 = min(t + step, t_end)
        sol = solve_ivp(rhs, (t, t1), u, method="DOP853", rtol=rtol, atol=atol, dense_output=True)
        pieces.append((t, t1, sol.sol))
        u = sol.y[:, -1]
        t = t1
    return state


def simulator_cases():
    out = {}
    ts = [2.5, 5.0, 7.5, 10.0]
    one = dde_reference(lambda t: 1.0, lambda a, b: b - a, lambda t: 2 + math.sin(t), [mm(2, 1)], [0.5],
                        [1.0, 0.5], 10.0)
    out["single"] = {"t": ts, "states": [list(one(t)) for t in ts]}

    d = lambda t: 1 + 0.5 * math.sin(t)
    Dint = lambda a, b: (b - a) + 0.5 * (math.cos(a) - math.cos(b))
    two = dde_reference(d, Dint, lambda t: 2 + math.sin(t), [mm(3, 1), mm(5, 2)], [0.37, 0.81],
                        [1.2, 0.3, 0.4], 10.0)
    out["pair_var_d"] = {"t": ts, "states": [list(two(t)) for t in ts]}
    return out


# periodic operator -----------------------------------------------------------

def phi_reference(b, k, tau, amp, c, ts):
    """Direct quadrature of the operator for d = 1, S0 = 2 + sin t, one species and
    the candidate x(t) = c (1 + amp sin t)."""
    p = mm(b, k)
    x = lambda t: c * (1 + amp * math.sin(t))
    ystar = lambda t: 2 + 0.5 * (math.sin(t) - math.cos(t))
    # with d = 1 both exponential weights are e^{+-tau}
    f = lambda s: math.exp(-tau) * p(ystar(s - tau) - math.exp(tau) * x(s)) * x(s - tau)
    out = []
    for t in ts:
        val, _ = quad(lambda s: math.exp(s - t) * f(s), t, t + 2 * math.pi, epsabs=1e-14, epsrel=1e-13, limit=400)
        out.append(val / math.expm1(2 * math.pi))
    return out


def phi_cases():
    ts = [0.0, 0.7, 2.0, 3.3, 4.9, 6.0]
    return {"b10_tau0.1": {"t": ts, "b": 10.0, "k": 1.0, "tau": 0.1, "amp": 0.3, "c": 1.5,
                           "phi": phi_reference(10.0, 1.0, 0.1, 0.3, 1.5, ts)},
            "b3_tau0.6": {"t": ts, "b": 3.0, "k": 0.5, "tau": 0.6, "amp": 0.5, "c": 0.4,
                          "phi": phi_reference(3.0, 0.5, 0.6, 0.5, 0.4, ts)}}


# conditions -------------------------------------------------------------------

def condition_cases():
    ystar = lambda t: 2 + 0.5 * (mp.sin(t) - mp.cos(t))
    out = {}
    for b, tau in ((10.0, 0.1), (1.0, 1.0), (4.0, 0.8)):
        p = lambda x, b=b: b * x / (1 + x)
        omega = 2 * mp.pi

        # existence integral: min_t int_t^{t+w} e^{s - t - tau} p(y*(s)) ds against e^{w} - 1
        def F(t):
            return mp.quad(lambda s: mp.e ** (s - t - tau) * p(ystar(s)), [t, t + omega])

        grid = [omega * j / 400 for j in range(400)]
        j = min(range(400), key=lambda j: F(grid[j]))
        tmin = mp.findroot(lambda t: mp.diff(F, t), grid[j])
        h3 = F(tmin) - (mp.e ** omega - 1)
        # rate integral of the linear comparison equation
        r = mp.quad(lambda t: mp.e ** (-tau) * p(ystar(t)) - 1, [0, omega])
        lo = 2 - 1 / mp.sqrt(2)
        hi = 2 + 1 / mp.sqrt(2)
        out[f"b{b}_tau{tau}"] = {"H3": float(h3), "r": float(r), "H3A": float(p(lo) - mp.e ** tau),
                                  "EXT_STAB": float(mp.e ** tau - p(hi))}

    # leftmost root of h(s) = d s + (max S0 - s) p(s) e^{-d tau} = d min S0, d = 1, S0 = 2 + sin t
    b, tau = 10.0, 0.1
    h = lambda s: s + (3 - s) * b * s / (1 + s) * mp.e ** (-tau) - 1
    out["m0_b10_tau0.1"] = float(mp.findroot(h, (mp.mpf("1e-6"), mp.mpf("0.5")), solver="bisect"))
    q = 1 / mp.mpf(2)
    B = b * mp.e ** (-tau)
    out["m0_closed_b10_tau0.1"] = float((2 - q) / (1 + B * (2 + q)))
    out["sigma_d1_2pi"] = float(mp.e ** (-2 * mp.pi))
    out["boundary_shift"] = float(mp.log((11 - mp.sqrt(2)) / 17))
    return out


def main():
    data = {"washout": washout_cases(), "simulator": simulator_cases(), "phi": phi_cases(),
            "conditions": condition_cases()}
    OUT.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
