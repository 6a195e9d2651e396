"""Diamond-scheme cascade decay: conservation checks, amplitude ODEs and
closed-form limits, and the biphoton temporal envelope.

Unit conventions used throughout this module:

* decay rates are quoted in MHz and converted internally to ns^-1
  (1 MHz = 1e-3 ns^-1),
* mode detunings are quoted in MHz and enter the equations of motion as
  angular frequencies (2*pi*1e-3 rad/ns),
* times are in ns, wavevectors in rad/m, optical angular frequencies in
  rad/s.

Couplings between the atom and the vacuum modes are dimensionless knobs
normalised to 1 by default; only temporal shapes are compared downstream.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import StepSizeError, ValidationError

SPEED_OF_LIGHT = 299_792_458.0  # m/s

MHZ_TO_INV_NS = 1e-3
MHZ_TO_RAD_NS = 2.0 * math.pi * 1e-3


@dataclass(frozen=True)
class AtomicCascade:
    """Level structure of the diamond scheme.

    Rates and detunings in MHz, transition angular frequencies in rad/s.
    Defaults are the effective rates of the cold-cloud source: the upper
    level decays at 0.6 MHz, the intermediate one at 36 MHz.
    """

    gamma_alpha: float = 0.6
    gamma_beta: float = 36.0
    omega_ab: float = 0.0
    omega_bg: float = 0.0
    detuning_big: float = 0.0
    detuning_small: float = 0.0

    def __post_init__(self):
        if self.gamma_alpha <= 0 or self.gamma_beta <= 0:
            raise ValidationError("decay rates must be positive", field="gamma")


@dataclass(frozen=True)
class PhaseMatchSpec:
    """Wavevectors (rad/m) and angular frequencies (rad/s) of the four fields."""

    k_p1: tuple[float, float, float]
    k_p2: tuple[float, float, float]
    k_s: tuple[float, float, float]
    k_i: tuple[float, float, float]
    omega_p1: float
    omega_p2: float
    omega_s: float
    omega_i: float

    @classmethod
    def colinear(cls, lambda_p1_nm, lambda_p2_nm, lambda_s_nm, lambda_i_nm,
                 axis=(0.0, 0.0, 1.0)):
        """Co-linear geometry from vacuum wavelengths in nm."""
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)

        def k_of(lam_nm):
            k = 2.0 * math.pi / (lam_nm * 1e-9)
            return tuple(k * axis)

        def w_of(lam_nm):
            return 2.0 * math.pi * SPEED_OF_LIGHT / (lam_nm * 1e-9)

        return cls(
            k_p1=k_of(lambda_p1_nm), k_p2=k_of(lambda_p2_nm),
            k_s=k_of(lambda_s_nm), k_i=k_of(lambda_i_nm),
            omega_p1=w_of(lambda_p1_nm), omega_p2=w_of(lambda_p2_nm),
            omega_s=w_of(lambda_s_nm), omega_i=w_of(lambda_i_nm),
        )


@dataclass(frozen=True)
class PhaseMatchReport:
    momentum_residual: tuple[float, float, float]
    energy_residual: float
    momentum_relative: float
    energy_relative: float
    passes: bool


def check_phase_matching(spec: PhaseMatchSpec, rel_tol: float) -> PhaseMatchReport:
    """Evaluate momentum and energy conservation of a four-field geometry.

    Passes iff both the momentum residual (relative to |k_p1 + k_p2|) and
    the energy residual (relative to omega_p1 + omega_p2) are within
    ``rel_tol``.
    """
    if rel_tol <= 0:
        raise ValidationError("rel_tol must be positive", field="rel_tol")
    kp1 = np.asarray(spec.k_p1, dtype=float)
    kp2 = np.asarray(spec.k_p2, dtype=float)
    ks = np.asarray(spec.k_s, dtype=float)
    ki = np.asarray(spec.k_i, dtype=float)
    if np.linalg.norm(kp1) == 0 or np.linalg.norm(kp2) == 0:
        raise ValidationError("pump wavevectors must be non-zero", field="k_p1/k_p2")

    pump_k = kp1 + kp2
    dk = pump_k - ks - ki
    pump_w = spec.omega_p1 + spec.omega_p2
    dw = pump_w - spec.omega_s - spec.omega_i

    mom_rel = float(np.linalg.norm(dk) / np.linalg.norm(pump_k))
    en_rel = abs(dw) / pump_w
    return PhaseMatchReport(
        momentum_residual=tuple(dk),
        energy_residual=float(dw),
        momentum_relative=mom_rel,
        energy_relative=float(en_rel),
        passes=bool(mom_rel <= rel_tol and en_rel <= rel_tol),
    )


@dataclass(frozen=True)
class BiphotonEnvelope:
    """One-sided exponential coincidence envelope: peak density and 1/e time."""

    amplitude: float
    tau_c: float  # ns

    def __post_init__(self):
        if self.tau_c <= 0:
            raise ValidationError("tau_c must be positive", field="tau_c")
        if self.amplitude < 0:
            raise ValidationError("amplitude must be non-negative", field="amplitude")

    @property
    def bandwidth_mhz(self) -> float:
        """Derived 1/(2 pi tau_c) bandwidth in MHz."""
        return 1e3 / (2.0 * math.pi * self.tau_c)


def biphoton_g2(env: BiphotonEnvelope, delta_t):
    """Coincidence density at signal-idler delay ``delta_t`` (ns).

    Zero for negative delays, exponential decay with the 1/e time tau_c
    for non-negative delays.
    """
    dt = np.asarray(delta_t, dtype=float)
    out = np.where(dt >= 0, env.amplitude * np.exp(-np.clip(dt, 0, None) / env.tau_c), 0.0)
    if np.isscalar(delta_t):
        return float(out)
    return out


@dataclass
class CascadeTrajectory:
    """Amplitudes of the cascade state sampled on a fixed time grid.

    ``c_beta`` has shape (K, nt) and ``c_gamma`` shape (K, Q, nt) where K
    and Q are the numbers of signal / idler mode detunings.
    """

    t_ns: np.ndarray
    c_alpha: np.ndarray
    c_beta: np.ndarray
    c_gamma: np.ndarray
    detunings_k_mhz: np.ndarray = field(default_factory=lambda: np.zeros(1))
    detunings_q_mhz: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def export_csv(self, path):
        """Write the trajectory as CSV: time plus re/im of every amplitude."""
        k_n = self.c_beta.shape[0]
        q_n = self.c_gamma.shape[1]
        header = ["time_ns", "c_alpha_re", "c_alpha_im"]
        for k in range(k_n):
            header += [f"c_beta_{k}_re", f"c_beta_{k}_im"]
        for k in range(k_n):
            for q in range(q_n):
                header += [f"c_gamma_{k}_{q}_re", f"c_gamma_{k}_{q}_im"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i, t in enumerate(self.t_ns):
                row = [f"{t:.9g}", f"{self.c_alpha[i].real:.9g}", f"{self.c_alpha[i].imag:.9g}"]
                for k in range(k_n):
                    row += [f"{self.c_beta[k, i].real:.9g}", f"{self.c_beta[k, i].imag:.9g}"]
                for k in range(k_n):
                    for q in range(q_n):
                        row += [f"{self.c_gamma[k, q, i].real:.9g}",
                                f"{self.c_gamma[k, q, i].imag:.9g}"]
                writer.writerow(row)


def default_detuning_grid(cascade: AtomicCascade, n: int = 5, span: float = 5.0):
    """Symmetric detuning grid (MHz) spanning +-span*Gamma around resonance."""
    half_k = span * cascade.gamma_alpha
    half_q = span * cascade.gamma_beta
    return (np.linspace(-half_k, half_k, n), np.linspace(-half_q, half_q, n))


def integrate_cascade(cascade: AtomicCascade, detunings_k_mhz, detunings_q_mhz,
                      t_max: float, dt: float | None = None,
                      coupling: float = 1.0) -> CascadeTrajectory:
    """Integrate the three coupled amplitude equations with fixed-step RK4.

    The system, for each signal mode k and idler mode q:

        c_alpha'   = -Ga/2 c_alpha
        c_beta_k'  = -i g exp(-i dk t) c_alpha - Gb/2 c_beta_k
        c_gamma_kq'= -i g exp(-i dq t) c_beta_k

    with c_alpha(0) = 1 and the rest zero. ``coupling`` is the normalised
    mode coupling g (default 1; only shapes matter downstream).
    """
    if dt is not None and dt <= 0:
        raise ValidationError("dt must be positive", field="dt")
    gb = cascade.gamma_beta * MHZ_TO_INV_NS
    ga = cascade.gamma_alpha * MHZ_TO_INV_NS
    if dt is None:
        dt = 0.01 / gb
    if t_max <= dt:
        raise ValidationError("t_max must exceed dt", field="t_max")
    if dt * gb > 0.1:
        raise StepSizeError(
            f"dt={dt} ns too coarse for Gamma_beta={cascade.gamma_beta} MHz "
            f"(need dt*Gamma_beta <= 0.1)")

    dks = np.asarray(detunings_k_mhz, dtype=float) * MHZ_TO_RAD_NS  # rad/ns
    dqs = np.asarray(detunings_q_mhz, dtype=float) * MHZ_TO_RAD_NS
    k_n, q_n = dks.size, dqs.size
    nt = int(math.floor(t_max / dt)) + 1
    t = np.arange(nt) * dt

    c_alpha = np.zeros(nt, dtype=complex)
    c_beta = np.zeros((k_n, nt), dtype=complex)
    c_gamma = np.zeros((k_n, q_n, nt), dtype=complex)
    c_alpha[0] = 1.0

    g = coupling

    def deriv(time, ca, cb, cg):
        dca = -0.5 * ga * ca
        drive_b = -1j * g * np.exp(-1j * dks * time) * ca
        dcb = drive_b - 0.5 * gb * cb
        dcg = -1j * g * np.exp(-1j * dqs * time)[None, :] * cb[:, None]
        return dca, dcb, dcg

    ca = 1.0 + 0.0j
    cb = np.zeros(k_n, dtype=complex)
    cg = np.zeros((k_n, q_n), dtype=complex)
    for i in range(1, nt):
        time = t[i - 1]
        k1 = deriv(time, ca, cb, cg)
        k2 = deriv(time + dt / 2, ca + dt / 2 * k1[0], cb + dt / 2 * k1[1], cg + dt / 2 * k1[2])
        k3 = deriv(time + dt / 2, ca + dt / 2 * k2[0], cb + dt / 2 * k2[1], cg + dt / 2 * k2[2])
        k4 = deriv(time + dt, ca + dt * k3[0], cb + dt * k3[1], cg + dt * k3[2])
        ca = ca + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        cb = cb + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        cg = cg + dt / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        c_alpha[i] = ca
        c_beta[:, i] = cb
        c_gamma[:, :, i] = cg

    return CascadeTrajectory(
        t_ns=t, c_alpha=c_alpha, c_beta=c_beta, c_gamma=c_gamma,
        detunings_k_mhz=np.asarray(detunings_k_mhz, dtype=float),
        detunings_q_mhz=np.asarray(detunings_q_mhz, dtype=float),
    )


def closed_form_c_alpha(cascade: AtomicCascade, t_ns):
    ga = cascade.gamma_alpha * MHZ_TO_INV_NS
    return np.exp(-0.5 * ga * np.asarray(t_ns, dtype=float))


def closed_form_c_beta(cascade: AtomicCascade, detuning_k_mhz, t_ns, coupling=1.0):
    """Intermediate-state amplitude for one signal mode, solved analytically."""
    ga = cascade.gamma_alpha * MHZ_TO_INV_NS
    gb = cascade.gamma_beta * MHZ_TO_INV_NS
    dk = detuning_k_mhz * MHZ_TO_RAD_NS
    t = np.asarray(t_ns, dtype=float)
    denom = -1j * dk + 0.5 * (gb - ga)
    return -1j * coupling * (np.exp((-1j * dk - 0.5 * ga) * t) - np.exp(-0.5 * gb * t)) / denom


def closed_form_c_gamma_inf(cascade: AtomicCascade, detuning_k_mhz, detuning_q_mhz,
                            coupling=1.0):
    """Asymptotic ground-state amplitude: product of two Lorentzian factors."""
    ga = cascade.gamma_alpha * MHZ_TO_INV_NS
    gb = cascade.gamma_beta * MHZ_TO_INV_NS
    dk = np.asarray(detuning_k_mhz, dtype=float) * MHZ_TO_RAD_NS
    dq = np.asarray(detuning_q_mhz, dtype=float) * MHZ_TO_RAD_NS
    return -(coupling ** 2) / ((1j * (dk + dq) + 0.5 * ga) * (1j * dq + 0.5 * gb))
