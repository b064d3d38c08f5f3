"""Closed-form reference values, written independently of the package code.

Only the standard library is used here so a bug shared with the
implementation (a numpy broadcasting slip, a unit mix-up) cannot hide.
"""
import math


def merz_tau(tau0, alpha, e_a, e_fe):
    return tau0 * math.exp((e_a / e_fe) ** alpha)


def field_mv_per_cm(kappa, volts, t_fe_nm):
    # 1 nm = 1e-7 cm; 1 MV = 1e6 V
    return kappa * volts / (t_fe_nm * 1e-7) / 1e6


def hazard_flip_prob(h0, h1, beta):
    """Probability of at least one flip while history climbs from h0 to h1."""
    return 1.0 - math.exp(h0 ** beta - h1 ** beta)


def history_piecewise(segments, tau_of_field):
    """Eq. for h: integral of 1/tau over a piecewise-constant field [(E, duration), ...]."""
    return sum(d / tau_of_field(e) for e, d in segments)


def binomial_se(p, n):
    return math.sqrt(p * (1 - p) / n)


def poisson_mean(rate_hz, duration_ms):
    return rate_hz * duration_ms * 1e-3


def exp_decay(v0, t, tau):
    return v0 * math.exp(-t / tau)
