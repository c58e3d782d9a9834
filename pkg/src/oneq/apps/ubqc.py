"""Blind delegated computation on a measurement-based linear cluster.

The client never sends its computation angles phi_n.  Each server qubit is
remotely prepared by measuring the client half of a shared pair at a secret
angle theta_n, after which the client only announces

    delta_n = phi'_n - theta_n + pi * r_n      (mod 2 pi)

where phi'_n is the flow-adapted angle and r_n a secret outcome-flip bit.
With theta_n uniform on the eight-point grid {k pi/4} and r_n a fair coin,
delta_n is uniform and independent of the pattern, which is the whole
blindness argument; the chi-square helpers below make it testable.

All angles live on the eight-point grid and are carried as integers
(multiples of pi/4), so the blinding algebra is exact.

Exact mode simulates the server's qubits as statevectors: remote
preparation collapses the server half of each pair, the server links
neighbours with CZ lazily (never holding more than two qubits), and the
client decodes outcomes through the byproduct frame

    angle:  lambda_n = (-1)^x phi_n
    frame:  (x, z) <- (b_n xor z, x)

with the logical result read off the last qubit at angle 0 and corrected
by the final z.  Parameterized mode skips the statevector and returns fair
outcome bits, which keeps timing and transcript statistics meaningful but
not the logical output distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .. import qcore
from ..protocol import Stack

__all__ = [
    "UbqcConfig",
    "UbqcResult",
    "UbqcApp",
    "ideal_chain_p_zero",
    "rsp_collapse",
    "blindness_pvalue",
    "pattern_distinguishability_pvalue",
]

GRID = 8  # angles are integer multiples of pi/4


def _angle(eighths: int) -> float:
    return (eighths % GRID) * math.pi / 4.0


def ideal_chain_p_zero(phi_eighths: tuple[int, ...]) -> float:
    """P(logical bit = 0) for the noiseless chain computation.

    Each pattern angle contributes one step H Rz(-phi) to |+>, and the
    final qubit is read out along X.
    """
    state = qcore.equatorial_state(0.0)
    for e in phi_eighths:
        state = qcore.oracle_apply(state, "RZ", (0,), theta=-_angle(e))
        state = qcore.oracle_apply(state, "H", (0,))
    amp_plus = (state.amplitudes[0] + state.amplitudes[1]) / math.sqrt(2.0)
    return float(abs(amp_plus) ** 2)


def rsp_collapse(w: float, theta_eighths: int, rng) -> tuple[int, qcore.PureState]:
    """Remote state preparation through one pair of mixture parameter w.

    Builds the shared state from a Bell label sampled from the Werner
    mixture, measures the client half at theta, and returns the outcome bit
    together with the collapsed server qubit.
    """
    x, z = qcore.sample_bell_label(w, rng)
    shared = qcore.bell_state(x, z)
    basis = qcore.MeasurementBasis.equatorial(_angle(theta_eighths))
    m, server_qubit = qcore.oracle_measure(shared, 0, basis, rng)
    return m, server_qubit


def blindness_pvalue(deltas_eighths) -> float:
    """Chi-square p-value for the announced angles being grid-uniform."""
    counts = np.bincount(np.asarray(deltas_eighths, dtype=int) % GRID,
                         minlength=GRID)
    return float(stats.chisquare(counts).pvalue)


def pattern_distinguishability_pvalue(deltas_a, deltas_b) -> float:
    """Contingency-test p-value for two transcripts sharing one distribution.

    Large values mean the announced-angle histograms do not separate the
    two computations.
    """
    ca = np.bincount(np.asarray(deltas_a, dtype=int) % GRID, minlength=GRID)
    cb = np.bincount(np.asarray(deltas_b, dtype=int) % GRID, minlength=GRID)
    table = np.stack([ca, cb])
    keep = table.sum(axis=0) > 0
    return float(stats.chi2_contingency(table[:, keep]).pvalue)


@dataclass(frozen=True)
class UbqcConfig:
    app_id: str
    client: str
    server: str
    phi_eighths: tuple[int, ...]
    shots: int = 100
    exact: bool = True
    blinding: str = "uniform"  # or "none" for the unblinded baseline
    min_fidelity: float = 0.8
    max_latency_s: float = 1.0

    def __post_init__(self) -> None:
        if not self.phi_eighths:
            raise ValueError("the pattern needs at least one angle")
        if any(not 0 <= e < GRID for e in self.phi_eighths):
            raise ValueError("pattern angles must be grid indices in 0..7")
        if self.shots < 1:
            raise ValueError(f"shots must be positive, got {self.shots}")
        if self.blinding not in ("uniform", "none"):
            raise ValueError(f"unknown blinding mode {self.blinding!r}")


@dataclass
class UbqcResult:
    app_id: str
    outcome: str
    shots_done: int = 0
    zeros: int = 0
    p_zero: float = 0.0
    pairs_consumed: int = 0
    mode: str = "exact"
    elapsed_s: float = 0.0
    deltas_eighths: tuple[int, ...] = field(default=(), repr=False)


class _ServerShot:
    """Server side of one shot: at most two live qubits at any time."""

    def __init__(self, exact: bool, rng):
        self.exact = exact
        self.rng = rng
        self.reg: Optional[qcore.PureState] = None

    def push(self, qubit: Optional[qcore.PureState]) -> None:
        if not self.exact:
            return
        if self.reg is None or self.reg.n_qubits == 0:
            self.reg = qubit
        else:
            self.reg = self.reg.tensor(qubit)
            self.reg = qcore.apply_cz(self.reg, 0, 1)

    def measure_front(self, delta_eighths: int) -> int:
        if not self.exact:
            return int(self.rng.integers(0, 2))
        basis = qcore.MeasurementBasis.equatorial(_angle(delta_eighths))
        outcome, self.reg = qcore.oracle_measure(self.reg, 0, basis, self.rng)
        return outcome


class UbqcApp:
    """Client-side driver: prepares, blinds, delegates, and decodes."""

    def __init__(self, config: UbqcConfig):
        self.config = config

    def run(self, stack: Stack):
        cfg = self.config
        sim = stack.sim
        t0 = sim.now
        sim.trace.emit(sim.now, cfg.client, "app-start", app=cfg.app_id, type="ubqc")
        ok = yield from stack.ensure_connected(cfg.client, cfg.server)
        if not ok:
            return self._finish(stack, UbqcResult(cfg.app_id, "aborted-attach"), t0)

        theta_rng = sim.rng_stream(cfg.client, "ubqc-theta")
        r_rng = sim.rng_stream(cfg.client, "ubqc-r")
        client_meas = sim.rng_stream(cfg.client, "measurement")
        server_meas = sim.rng_stream(cfg.server, "measurement")

        zeros = 0
        shots_done = 0
        pairs = 0
        deltas: list[int] = []
        for _ in range(cfg.shots):
            shot = yield from self._one_shot(stack, theta_rng, r_rng,
                                             client_meas, server_meas, deltas)
            if shot is None:
                result = UbqcResult(cfg.app_id, "starved", shots_done=shots_done,
                                    zeros=zeros, pairs_consumed=pairs,
                                    mode="exact" if cfg.exact else "parameterized",
                                    deltas_eighths=tuple(deltas))
                if shots_done:
                    result.p_zero = zeros / shots_done
                return self._finish(stack, result, t0)
            logical, used = shot
            shots_done += 1
            pairs += used
            if logical == 0:
                zeros += 1
        result = UbqcResult(
            cfg.app_id, "done", shots_done=shots_done, zeros=zeros,
            p_zero=zeros / shots_done, pairs_consumed=pairs,
            mode="exact" if cfg.exact else "parameterized",
            deltas_eighths=tuple(deltas),
        )
        return self._finish(stack, result, t0)

    def _rsp_one(self, stack: Stack, theta_rng, client_meas):
        """Generator: acquire a pair and collapse the server half.

        Returns (theta_eff_eighths, server_qubit_or_None) or None when no
        pair could be provisioned.
        """
        cfg = self.config
        taken, _ = yield from stack.acquire_pairs(
            cfg.client, cfg.server, 1, cfg.min_fidelity, cfg.max_latency_s)
        if not taken:
            return None
        pair = stack.consume_pair(taken[0], "rsp")
        theta8 = int(theta_rng.integers(0, GRID)) if cfg.blinding == "uniform" else 0
        if cfg.exact:
            m, server_qubit = rsp_collapse(pair.w, theta8, client_meas)
        else:
            m, server_qubit = int(client_meas.integers(0, 2)), None
        theta_eff8 = (theta8 + 4 * m) % GRID
        return theta_eff8, server_qubit

    def _one_shot(self, stack: Stack, theta_rng, r_rng, client_meas,
                  server_meas, deltas: list[int]):
        cfg = self.config
        n_steps = len(cfg.phi_eighths) + 1  # pattern angles plus readout
        server = _ServerShot(cfg.exact, server_meas)

        first = yield from self._rsp_one(stack, theta_rng, client_meas)
        if first is None:
            return None
        theta_eff8, qubit = first
        server.push(qubit)

        x = z = 0
        logical = 0
        used = 1
        for n in range(n_steps):
            if n + 1 < n_steps:
                nxt = yield from self._rsp_one(stack, theta_rng, client_meas)
                if nxt is None:
                    return None
                used += 1
                server.push(nxt[1])
            r = int(r_rng.integers(0, 2)) if cfg.blinding == "uniform" else 0
            if n < len(cfg.phi_eighths):
                phi8 = cfg.phi_eighths[n]
                lam8 = phi8 if x == 0 else (-phi8) % GRID
            else:
                lam8 = 0  # readout along X
            delta8 = (lam8 - theta_eff8 + 4 * r) % GRID
            deltas.append(delta8)
            ok = yield from stack.send_routed(cfg.client, cfg.server, "angle")
            if not ok:
                return None
            s = server.measure_front(delta8)
            ok = yield from stack.send_routed(cfg.server, cfg.client, "outcome")
            if not ok:
                return None
            b = s ^ r
            if n < len(cfg.phi_eighths):
                x, z = b ^ z, x
            else:
                logical = b ^ z
            if n + 1 < n_steps:
                theta_eff8 = nxt[0]
        return logical, used

    def _finish(self, stack: Stack, result: UbqcResult, t0: float) -> UbqcResult:
        sim = stack.sim
        result.elapsed_s = sim.now - t0
        prefix = f"app.{self.config.app_id}"
        sim.metrics.set_gauge(f"{prefix}.p_zero", result.p_zero)
        sim.metrics.set_gauge(f"{prefix}.shots", float(result.shots_done))
        sim.metrics.set_gauge(f"{prefix}.pairs_consumed", float(result.pairs_consumed))
        sim.metrics.set_gauge(f"{prefix}.elapsed_s", result.elapsed_s, unit="s")
        sim.trace.emit(sim.now, self.config.client, "app-end",
                       app=self.config.app_id, type="ubqc",
                       outcome=result.outcome, shots=result.shots_done)
        return result
