"""Throughput and roofline benchmarking of the kinetics kernels.

Synthetic layouts exercise the conditional branches in contiguous blocks
(size 1 = worst-case alternating data); the harness times step_all on them
and reports DoF/s.  Machine ceilings come from built-in baselines: a DAXPY
stream update for memory bandwidth and an FMA loop for peak compute.  Flops
are counted analytically by replaying the batch branch dispatch on the
layout, never from hardware counters; bytes are the modeled 72 per point.
Only multiplies, adds/subtracts, divides and fused multiply-adds (2) are
counted, matching what the kernels execute per branch.

The compute ceiling can be derated by an instruction-mix factor: of the work
occupying the floating-point ports, only part retires as FP arithmetic once
dependency chains and same-port shuffles/converts are accounted for.  The
factor is hardware-specific; port-utilization analysis of the dissolution
rate chain gives ~0.43 on recent Intel server cores and ~0.57 on AMD EPYC.
The default here is 1.0 (no derating).
"""

MIX_FACTOR_PRESETS = {"none": 1.0, "intel-server": 0.43, "amd-epyc": 0.57}

import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange, set_num_threads

from .batch import DOF_PER_POINT, BYTES_PER_POINT, GlobalFields, step_all
from .integrator import IntegratorConfig
from .kinetics import DEFAULT_PARAMS, x_alpha_eq

__all__ = [
    "BLOCK_SIZES",
    "generate_layout",
    "measure_bandwidth",
    "measure_peak_flops",
    "measure_throughput",
    "count_flops",
    "RooflineReport",
    "roofline",
]

BLOCK_SIZES = (1, 10, 100)

# analytic per-lane operation counts (mul/add/sub/div = 1, fma = 2)
FLOPS_EXP = 19        # arg scale, floor split, degree-7 Estrin, bit fill
FLOPS_LN = 26         # mantissa/exponent split, degree-11 Estrin, ln2 join
FLOPS_POW = FLOPS_LN + FLOPS_EXP + 1
FLOPS_TFUNCS = 2 + 1 + (FLOPS_EXP + 3) + (FLOPS_EXP + 4)  # g, xsol, xaeq, kas
FLOPS_XMEQ_BASE = FLOPS_EXP + 3
FLOPS_BRANCH_SHARED = FLOPS_POW       # x_alpha_s prefactor
FLOPS_BRANCH_GROW = FLOPS_POW + 3     # drive power, rate product
FLOPS_BRANCH_AM = FLOPS_POW + 3
FLOPS_BRANCH_DISSOLVE = 2 * FLOPS_POW + 6
FLOPS_RATES_BASE = 4                  # ds/dm assembly
FLOPS_EULER = 4
FLOPS_CORRECTIONS = 10
FLOPS_WRMS = 12


def generate_layout(block_size, n_points, seed=0, params=DEFAULT_PARAMS):
    """Deterministic fields whose branch conditions alternate per block.

    Even blocks are cooling mid-transformation points (beta -> alpha_s
    growth); odd blocks are heating points above equilibrium (alpha_s
    dissolution).  Within a block every point takes the same branches.
    """
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    rng = np.random.default_rng(seed)
    idx = np.arange(n_points)
    odd = (idx // block_size) % 2 == 1

    t_old = np.where(odd, 1150.0, 1000.0) + rng.uniform(-20.0, 20.0, n_points)
    t_new = t_old + np.where(odd, 1.0, -1.0)
    xs = np.where(odd, 0.80, 0.20) + rng.uniform(-0.02, 0.02, n_points)
    xm = np.zeros(n_points)
    xb = 1.0 - xs - xm
    fields = GlobalFields(xs, xm, xb, t_old, t_new)
    return fields


@njit(error_model="numpy", cache=True)
def _daxpy(y, x, a):
    for i in range(y.shape[0]):
        y[i] = y[i] + a * x[i]


@njit(error_model="numpy", cache=True, parallel=True)
def _daxpy_par(y, x, a):
    for i in prange(y.shape[0]):
        y[i] = y[i] + a * x[i]


def measure_bandwidth(n=20_000_000, repetitions=8, threads=1):
    """Stream-update (DAXPY) bandwidth in GB/s: 24 bytes per element."""
    x = np.full(n, 1.0)
    y = np.full(n, 2.0)
    kern = _daxpy if threads <= 1 else _daxpy_par
    if threads > 1:
        set_num_threads(threads)
    kern(y, x, 0.999999)
    best = np.inf
    for _ in range(repetitions):
        t0 = time.perf_counter()
        kern(y, x, 1.000001)
        best = min(best, time.perf_counter() - t0)
    return 24.0 * n / best / 1e9


@njit(error_model="numpy", cache=True)
def _fma_peak(acc, m, a, reps):
    for _ in range(reps):
        for i in range(acc.shape[0]):
            acc[i] = acc[i] * m + a
    return acc[0]


def measure_peak_flops(lanes=4096, reps=4096, repetitions=8):
    """Peak FMA throughput in GFlop/s (2 flops per fused multiply-add)."""
    acc = np.full(lanes, 1.0)
    _fma_peak(acc, 0.9999999, 1e-7, 16)
    best = np.inf
    for _ in range(repetitions):
        t0 = time.perf_counter()
        _fma_peak(acc, 0.9999999, 1e-7, reps)
        best = min(best, time.perf_counter() - t0)
    return 2.0 * lanes * reps / best / 1e9


def measure_throughput(layout, scheme="explicit", n_lanes=8, repetitions=20,
                       warmup=10, dt=0.01, params=DEFAULT_PARAMS, threads=1):
    """Median DoF/s of step_all on the layout (3 DoF per point).

    Each repetition restores the layout's original state outside the timed
    region, so every timed step sees identical data and branch masks.
    Returns (dof_per_s, median_seconds, iters_per_point or None).
    """
    config = IntegratorConfig(scheme=scheme, dt_sub_max=dt)
    pristine = layout.copy()
    iters = None
    times = []
    for rep in range(warmup + repetitions):
        work = pristine.copy()
        t0 = time.perf_counter()
        step_all(work, dt, params, config, n_lanes=n_lanes, threads=threads)
        el = time.perf_counter() - t0
        if rep >= warmup:
            times.append(el)
    if scheme == "crank_nicolson":
        work = pristine.copy()
        iters = step_all(work, dt, params, config, n_lanes=n_lanes,
                         threads=threads, record_iters=True)
    med = float(np.median(times))
    return DOF_PER_POINT * layout.n_points / med, med, iters


def count_flops(layout, scheme="explicit", n_lanes=8, dt=0.01,
                params=DEFAULT_PARAMS, iters=None):
    """Analytic flop count of one step_all on the layout.

    Replays the three-scenario dispatch per lane batch: a branch someone in
    the batch needs is counted on all n_lanes lanes; a branch nobody needs
    costs nothing.
    """
    n = layout.n_points
    nbat = (n + n_lanes - 1) // n_lanes
    pad = nbat * n_lanes

    def batched(a, fill):
        out = np.full(pad, fill)
        out[:n] = a
        out[n:] = a[-1] if n else fill
        return out.reshape(nbat, n_lanes)

    xs = batched(layout.x_alpha_s, 0.0)
    xm = batched(layout.x_alpha_m, 0.0)
    t0 = batched(layout.temperature_old, 1000.0)
    t1 = batched(layout.temperature_new, 1000.0)
    xa = xs + xm

    flops = 0
    # temperature functions at both macro endpoints, all lanes
    flops += 2 * FLOPS_TFUNCS * pad
    # martensite base term when any lane in the batch is below the window top
    form = (t1 < params.t_alpha_m_start).any(axis=1)
    flops += FLOPS_XMEQ_BASE * n_lanes * int(form.sum())
    # rate branches at the T_old states
    xaeq0 = x_alpha_eq(t0.ravel(), params).reshape(nbat, n_lanes)
    grow = (xa < xaeq0) & (xs > 0.0)
    am = (xm > 0.0) & (xs > 0.0)
    dis = (xa > xaeq0) & (xa < 0.9)
    n_shared = int((grow.any(axis=1) | am.any(axis=1)).sum())
    flops += FLOPS_BRANCH_SHARED * n_lanes * n_shared
    flops += FLOPS_BRANCH_GROW * n_lanes * int(grow.any(axis=1).sum())
    flops += FLOPS_BRANCH_AM * n_lanes * int(am.any(axis=1).sum())
    flops += FLOPS_BRANCH_DISSOLVE * n_lanes * int(dis.any(axis=1).sum())
    flops += (FLOPS_RATES_BASE + FLOPS_EULER + FLOPS_CORRECTIONS) * pad
    if scheme == "crank_nicolson":
        # each fixed-point iteration redoes rates + corrections + WRMS at T_new
        mean_iters = float(np.mean(iters)) if iters is not None else 2.0
        per_iter = (FLOPS_BRANCH_SHARED + FLOPS_BRANCH_GROW + FLOPS_BRANCH_DISSOLVE
                    + FLOPS_RATES_BASE + FLOPS_CORRECTIONS + FLOPS_WRMS)
        flops += int((1.0 + mean_iters) * per_iter * pad)
    return flops


@dataclass
class RooflineReport:
    """Measured runs against the machine's memory and compute ceilings."""

    measured_bandwidth: float          # GB/s
    peak_flops: float                  # GFlop/s
    instruction_mix_factor: float = 1.0
    rows: list = field(default_factory=list)

    def add_run(self, label, flops, bytes_modeled, seconds):
        intensity = flops / bytes_modeled
        achieved = flops / seconds / 1e9
        ceiling = min(self.peak_flops * self.instruction_mix_factor,
                      intensity * self.measured_bandwidth)
        self.rows.append({
            "label": label,
            "flops": flops,
            "bytes": bytes_modeled,
            "seconds": seconds,
            "gflops": achieved,
            "intensity": intensity,
            "ceiling": ceiling,
        })

    @property
    def memory_bound_dof_rate(self):
        """Modeled memory-bound throughput: bandwidth / 24 B per DoF (GDoF/s)."""
        return self.measured_bandwidth / (BYTES_PER_POINT / DOF_PER_POINT)

    def respects_ceilings(self, slack=0.05):
        return all(r["gflops"] <= r["ceiling"] * (1.0 + slack) for r in self.rows)

    def to_csv(self):
        lines = ["label,flops,bytes,seconds,gflops,intensity,ceiling_gflops"]
        for r in self.rows:
            lines.append(f"{r['label']},{r['flops']},{r['bytes']},{r['seconds']!r},"
                         f"{r['gflops']!r},{r['intensity']!r},{r['ceiling']!r}")
        return "\n".join(lines) + "\n"

    def to_gnuplot(self):
        """Intensity vs achieved GFlop/s plus the two ceiling lines."""
        lines = ["# intensity_flop_per_byte achieved_gflops ceiling_gflops label"]
        for r in self.rows:
            lines.append(f"{r['intensity']!r} {r['gflops']!r} {r['ceiling']!r} {r['label']}")
        lines.append("")
        lines.append("# ceilings: memory = intensity * bandwidth; compute = peak * mix")
        lines.append(f"# bandwidth_gb_s = {self.measured_bandwidth!r}")
        lines.append(f"# peak_gflops = {self.peak_flops!r}")
        lines.append(f"# mix_factor = {self.instruction_mix_factor!r}")
        return "\n".join(lines) + "\n"


def roofline(runs, measured_bandwidth=None, peak_flops=None,
             instruction_mix_factor=1.0, threads=1):
    """Assemble a RooflineReport from measured runs.

    `runs` is a list of dicts with keys label, flops, bytes, seconds (e.g.,
    built from measure_throughput + count_flops).  Baselines are measured on
    this machine unless supplied.
    """
    bw = measured_bandwidth if measured_bandwidth is not None else measure_bandwidth(threads=threads)
    pk = peak_flops if peak_flops is not None else measure_peak_flops()
    rep = RooflineReport(bw, pk, instruction_mix_factor)
    for r in runs:
        rep.add_run(r["label"], r["flops"], r["bytes"], r["seconds"])
    return rep
