"""Distributed phase estimation with separable or GHZ-correlated probes.

Separable mode: every sensor interrogates the field with its own probe
qubit, so one shot yields one bit per sensor with

    P(0) = (1 + C cos phi) / 2,        C = exp(-tau / t2).

Pooling N sensors over M shots gives N * M independent bits and the
estimator standard error scales as 1 / sqrt(N M): the standard quantum
limit.  GHZ mode distributes one N-party resource per shot and reads the
parity, whose visibility oscillates N times faster,

    P(even) = (1 + w C cos(N phi)) / 2,

with w the delivered mixture parameter.

The reported uncertainty propagates the binomial error of the pooled
frequency through the arccos estimator (delta method); a batch-means
spread over shot chunks is included as a cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from ..errors import ConfigurationError
from ..netmodel import classical_send
from ..protocol import Stack

__all__ = [
    "SensingConfig",
    "SensingResult",
    "SensingApp",
    "probe_probability",
    "parity_probability",
    "estimate_phase",
    "delta_method_se",
]


def probe_probability(phi: float, contrast: float) -> float:
    return 0.5 * (1.0 + contrast * math.cos(phi))


def parity_probability(phi: float, n_sensors: int, w: float, contrast: float) -> float:
    return 0.5 * (1.0 + w * contrast * math.cos(n_sensors * phi))


def estimate_phase(p_hat: float, visibility: float, scale: int = 1) -> float:
    """Invert p = (1 + V cos(scale * phi)) / 2 for phi in [0, pi/scale]."""
    if visibility <= 0.0:
        raise ValueError(f"visibility must be positive, got {visibility}")
    arg = (2.0 * p_hat - 1.0) / visibility
    arg = min(1.0, max(-1.0, arg))
    return math.acos(arg) / scale


def delta_method_se(p_hat: float, n_bits: int, visibility: float,
                    phi_hat: float, scale: int = 1) -> float:
    """Binomial error of p_hat propagated through the arccos inversion."""
    if n_bits <= 0:
        return math.inf
    se_p = math.sqrt(max(p_hat * (1.0 - p_hat), 0.0) / n_bits)
    slope = 0.5 * visibility * scale * abs(math.sin(scale * phi_hat))
    if slope == 0.0:
        return math.inf
    return se_p / slope


@dataclass(frozen=True)
class SensingConfig:
    app_id: str
    fusion: str
    sensors: tuple[str, ...]
    phi_true: float
    shots: int
    mode: str = "separable"  # or "ghz"
    tau_interrogate_s: float = 1e-3
    t2_s: float = 0.05
    reinit_delay_s: float = 1e-4
    min_fidelity: float = 0.5
    max_latency_s: float = 0.5
    trace_reports: bool = False

    def __post_init__(self) -> None:
        if not self.sensors:
            raise ValueError("at least one sensor is required")
        if len(set(self.sensors)) != len(self.sensors):
            raise ValueError("sensor ids must be distinct")
        if self.mode not in ("separable", "ghz"):
            raise ValueError(f"unknown sensing mode {self.mode!r}")
        if self.mode == "ghz" and len(self.sensors) < 2:
            raise ValueError("ghz mode needs at least two sensors")
        if self.shots < 1:
            raise ValueError(f"shots must be positive, got {self.shots}")
        if self.tau_interrogate_s <= 0.0 or self.t2_s <= 0.0:
            raise ValueError("tau_interrogate_s and t2_s must be positive")


@dataclass
class SensingResult:
    app_id: str
    outcome: str
    mode: str = "separable"
    shots_done: int = 0
    bits_used: int = 0
    discarded: int = 0
    p_hat: float = 0.0
    phi_est: float = 0.0
    phi_std: float = 0.0
    phi_std_batch: float = 0.0
    visibility: float = 0.0
    mean_w: float = 1.0
    elapsed_s: float = 0.0


class SensingApp:
    """Runs the shot loop on the stack and fuses reports at the base station."""

    def __init__(self, config: SensingConfig):
        self.config = config
        self.contrast = math.exp(-config.tau_interrogate_s / config.t2_s)

    def run(self, stack: Stack):
        cfg = self.config
        sim = stack.sim
        t0 = sim.now
        sim.trace.emit(sim.now, cfg.fusion, "app-start", app=cfg.app_id,
                       type="sensing", mode=cfg.mode)
        for s in cfg.sensors:
            if stack.topo.classical_link(s, cfg.fusion) is None:
                raise ConfigurationError(f"sensor {s} has no classical link to "
                                         f"{cfg.fusion}")
        if cfg.mode == "ghz":
            result = yield from self._run_ghz(stack)
        else:
            result = yield from self._run_separable(stack)
        return self._finish(stack, result, t0)

    # -- separable --------------------------------------------------------

    def _run_separable(self, stack: Stack):
        cfg = self.config
        sim = stack.sim
        topo = stack.topo
        rng = sim.rng_stream(cfg.fusion, "sensing")
        p0 = probe_probability(cfg.phi_true, self.contrast)
        links = {s: topo.classical_link(s, cfg.fusion) for s in cfg.sensors}
        link_rngs = {s: sim.rng_stream(s, "classical") for s in cfg.sensors}
        static = all(topo.nodes[n].mobility.kind == "static"
                     for n in (cfg.fusion,) + cfg.sensors)
        static_cover = {
            s: topo.in_classical_coverage(s, cfg.fusion, sim.now) for s in cfg.sensors
        } if static else {}

        zeros = 0
        used = 0
        discarded = 0
        per_shot_zeros: list[tuple[int, int]] = []
        bits_report = stack._bits("report")
        for _ in range(cfg.shots):
            yield cfg.reinit_delay_s + cfg.tau_interrogate_s
            draws = rng.random(len(cfg.sensors))
            shot_zeros = 0
            shot_used = 0
            max_latency = 0.0
            for i, s in enumerate(cfg.sensors):
                covered = static_cover[s] if static \
                    else topo.in_classical_coverage(s, cfg.fusion, sim.now)
                if not covered:
                    discarded += 1
                    if cfg.trace_reports:
                        sim.trace.emit(sim.now, s, "sensing-report", app=cfg.app_id,
                                       delivered=False, reason="no-coverage")
                    continue
                delivered, latency = classical_send(links[s], bits_report,
                                                    link_rngs[s])
                if cfg.trace_reports:
                    sim.trace.emit(sim.now, s, "sensing-report", app=cfg.app_id,
                                   delivered=delivered)
                if not delivered:
                    discarded += 1
                    continue
                max_latency = max(max_latency, latency)
                shot_used += 1
                if draws[i] < p0:
                    shot_zeros += 1
            if max_latency > 0.0:
                yield max_latency
            zeros += shot_zeros
            used += shot_used
            per_shot_zeros.append((shot_zeros, shot_used))

        if used == 0:
            return SensingResult(cfg.app_id, "no-data", mode=cfg.mode,
                                 shots_done=cfg.shots, discarded=discarded)
        p_hat = zeros / used
        phi = estimate_phase(p_hat, self.contrast)
        return SensingResult(
            cfg.app_id, "done", mode=cfg.mode, shots_done=cfg.shots,
            bits_used=used, discarded=discarded, p_hat=p_hat, phi_est=phi,
            phi_std=delta_method_se(p_hat, used, self.contrast, phi),
            phi_std_batch=self._batch_se(per_shot_zeros, self.contrast, 1),
            visibility=self.contrast,
        )

    # -- ghz ---------------------------------------------------------------

    def _run_ghz(self, stack: Stack):
        cfg = self.config
        sim = stack.sim
        topo = stack.topo
        n = len(cfg.sensors)
        rng = sim.rng_stream(cfg.fusion, "sensing")
        link_rngs = {s: sim.rng_stream(s, "classical") for s in cfg.sensors}
        links = {s: topo.classical_link(s, cfg.fusion) for s in cfg.sensors}
        for s in cfg.sensors:
            ok = yield from stack.ensure_connected(s, cfg.fusion)
            if not ok:
                return SensingResult(cfg.app_id, "aborted-attach", mode=cfg.mode)

        even = 0
        used = 0
        discarded = 0
        w_sum = 0.0
        per_shot: list[tuple[int, int]] = []
        bits_report = stack._bits("report")
        for _ in range(cfg.shots):
            yield cfg.reinit_delay_s
            ghz_id = yield from stack.ghz_session(cfg.fusion, cfg.sensors,
                                                  max_latency_s=cfg.max_latency_s)
            if ghz_id is None:
                discarded += 1
                continue
            yield cfg.tau_interrogate_s
            ghz = stack.ledger.live(ghz_id)
            dt = sim.now - ghz.created_at
            w_used = ghz.w * math.exp(-dt / stack.effective_t_coh(ghz.holders))
            stack.consume_pair(ghz_id, "sensing-parity")
            reported = True
            max_latency = 0.0
            for s in cfg.sensors:
                if not topo.in_classical_coverage(s, cfg.fusion, sim.now):
                    reported = False
                    if cfg.trace_reports:
                        sim.trace.emit(sim.now, s, "sensing-report", app=cfg.app_id,
                                       delivered=False, reason="no-coverage")
                    break
                delivered, latency = classical_send(links[s], bits_report,
                                                    link_rngs[s])
                if cfg.trace_reports:
                    sim.trace.emit(sim.now, s, "sensing-report", app=cfg.app_id,
                                   delivered=delivered)
                if not delivered:
                    reported = False
                    break
                max_latency = max(max_latency, latency)
            if max_latency > 0.0:
                yield max_latency
            if not reported:
                discarded += 1  # parity needs every sensor's bit
                continue
            p_even = parity_probability(cfg.phi_true, n, w_used, self.contrast)
            bit_even = rng.random() < p_even
            even += int(bit_even)
            used += 1
            w_sum += w_used
            per_shot.append((int(bit_even), 1))

        if used == 0:
            return SensingResult(cfg.app_id, "no-data", mode=cfg.mode,
                                 shots_done=cfg.shots, discarded=discarded)
        p_hat = even / used
        mean_w = w_sum / used
        visibility = mean_w * self.contrast
        phi = estimate_phase(p_hat, visibility, scale=n)
        return SensingResult(
            cfg.app_id, "done", mode=cfg.mode, shots_done=cfg.shots,
            bits_used=used, discarded=discarded, p_hat=p_hat, phi_est=phi,
            phi_std=delta_method_se(p_hat, used, visibility, phi, scale=n),
            phi_std_batch=self._batch_se(per_shot, visibility, n),
            visibility=visibility, mean_w=mean_w,
        )

    # -- shared ------------------------------------------------------------

    @staticmethod
    def _batch_se(per_shot: list[tuple[int, int]], visibility: float,
                  scale: int) -> float:
        """Spread of per-chunk estimates, as a cross-check on the delta method."""
        shots = [(z, u) for z, u in per_shot if u > 0]
        n_batches = min(20, len(shots))
        if n_batches < 2:
            return math.inf
        size = len(shots) // n_batches
        estimates = []
        for b in range(n_batches):
            chunk = shots[b * size:(b + 1) * size]
            z = sum(c[0] for c in chunk)
            u = sum(c[1] for c in chunk)
            if u == 0:
                continue
            estimates.append(estimate_phase(z / u, visibility, scale))
        if len(estimates) < 2:
            return math.inf
        mean = sum(estimates) / len(estimates)
        var = sum((e - mean) ** 2 for e in estimates) / (len(estimates) - 1)
        return math.sqrt(var / len(estimates))

    def _finish(self, stack: Stack, result: SensingResult, t0: float) -> SensingResult:
        sim = stack.sim
        result.elapsed_s = sim.now - t0
        prefix = f"app.{self.config.app_id}"
        sim.metrics.set_gauge(f"{prefix}.phi_est", result.phi_est, unit="rad")
        sim.metrics.set_gauge(f"{prefix}.phi_std", result.phi_std, unit="rad")
        sim.metrics.set_gauge(f"{prefix}.p_hat", result.p_hat)
        sim.metrics.set_gauge(f"{prefix}.bits_used", float(result.bits_used))
        sim.metrics.set_gauge(f"{prefix}.discarded", float(result.discarded))
        sim.metrics.set_gauge(f"{prefix}.elapsed_s", result.elapsed_s, unit="s")
        sim.trace.emit(sim.now, self.config.fusion, "app-end", app=self.config.app_id,
                       type="sensing", outcome=result.outcome,
                       bits=result.bits_used)
        return result
