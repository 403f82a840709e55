"""Acceptance suite: one test per release criterion, printed pass/fail.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
lines. Everything is seeded; the whole module is deterministic.
"""

import math
import time

import numpy as np
import pytest
from scipy.signal import convolve2d

from evrec.analysis import CcSummary, spike_entropy
from evrec.cli import main as cli_main
from evrec.config import RunConfig, derive_seed
from evrec.events import SynthSpec, synthesize
from evrec.features import (FUSION_MODES, FeatureMaps, GaborBank, GaborConfig,
                            encode, fit_coding, gabor_kernel,
                            n_fusion_addresses)
from evrec.pipeline import (pooled_responses, recording_features,
                            run_split_experiment)
from evrec.snn import Network, SnnConfig

TABLE = GaborConfig()


def report(num: int, desc: str, ok: bool, detail: str = ""):
    line = f"[criterion {num:2d}] {'PASS' if ok else 'FAIL'} {desc}"
    if detail:
        line += f" ({detail})"
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def cfg() -> RunConfig:
    return RunConfig()


@pytest.fixture(scope="module")
def bank(cfg) -> GaborBank:
    return GaborBank(cfg.gabor_config())


@pytest.fixture(scope="module")
def dataset(cfg, bank):
    """The desk-scale workload: 3 shape classes x 40 recordings."""
    t0 = time.perf_counter()
    recordings = []
    for label, class_spec in enumerate(cfg["synth.classes"]):
        kind, _, angle = class_spec.partition("@")
        for r in range(cfg["synth.per_class"]):
            spec = SynthSpec(kind=kind, angle_deg=float(angle or 0.0),
                             seed=derive_seed(0, f"synth-{label}-{r}"))
            stream = synthesize(spec)
            recordings.append(recording_features(
                stream, cfg.msd_config(), bank,
                cfg["feature.tau_leak_ms"], label))
    return recordings, 3, time.perf_counter() - t0


# ---------------------------------------------------------------------------

def test_c01_s1_oracle_equivalence(bank):
    """Lazy-decay accumulation equals direct response summation."""

    def oracle(xs, ys, ts_ms, t_end, tau):
        img = np.zeros((32, 32))
        np.add.at(img, (ys, xs), np.exp((ts_ms - t_end) / tau))
        return np.stack([
            np.stack([convolve2d(img, bank.kernels[si][oi], mode="same")
                      for oi in range(bank.n_orientations)])
            for si in range(bank.n_scales)])

    t0 = time.perf_counter()
    worst = 0.0
    tau = 30.0
    for i in range(100):
        rng = np.random.default_rng(derive_seed(101, f"oracle-{i}"))
        n = int(rng.integers(100, 10_001))
        t_us = np.sort(rng.integers(0, 2_000_000, n))
        xs = rng.integers(0, 32, n)
        ys = rng.integers(0, 32, n)
        maps = FeatureMaps(32, 32, bank, tau_leak_ms=tau)
        maps.deliver_events(xs, ys, t_us)
        t_end = t_us[-1] / 1000.0
        maps.refresh(t_end)
        direct = oracle(xs, ys, t_us / 1000.0, t_end, tau)
        err = np.abs(maps.stacked() - direct).max() / np.abs(direct).max()
        worst = max(worst, err)
    elapsed = time.perf_counter() - t0
    report(1, "lazy S1 matches direct summation on 100 random streams",
           worst < 1e-9 and elapsed < 30.0,
           f"max rel err {worst:.2e}, {elapsed:.1f}s")


def test_c02_gabor_identities():
    worst_sym = worst_rot = worst_center = 0.0
    for s, sigma, lam in zip(TABLE.scales, TABLE.sigmas, TABLE.lambdas):
        for theta in TABLE.orientations_deg:
            k = gabor_kernel(s, theta, TABLE.gamma, sigma, lam)
            worst_center = max(worst_center, abs(k[s, s] - 1.0))
            worst_sym = max(worst_sym, np.abs(k - k[::-1, ::-1]).max())
            rot = gabor_kernel(s, theta + 90.0, TABLE.gamma, sigma, lam)
            for dy in range(-s, s + 1):
                for dx in range(-s, s + 1):
                    diff = abs(rot[dy + s, dx + s] - k[-dx + s, dy + s])
                    worst_rot = max(worst_rot, diff)
    report(2, "Gabor even symmetry, 90-degree rotation, unit center",
           worst_sym <= 1e-12 and worst_rot <= 1e-12 and worst_center == 0.0,
           f"sym {worst_sym:.1e}, rot {worst_rot:.1e}")


def test_c03_coding_endpoints_and_monotonicity():
    t_w, r_min = 500.0, 0.2
    rng = np.random.default_rng(derive_seed(103, "coding"))
    log_params = fit_coding([r_min, 6.25], r_min, t_w, kind="log")
    lin_params = fit_coding([r_min, 6.25], r_min, t_w, kind="linear")
    end_hi = abs(float(log_params.spike_time(log_params.r_max)))
    end_lo = abs(float(log_params.spike_time(r_min)) - t_w)
    end_lin = abs(float(lin_params.spike_time(lin_params.r_max)))
    monotone = True
    for params in (log_params, lin_params):
        r = np.sort(rng.uniform(r_min + 1e-12, params.r_max, 10_000))
        monotone &= bool(np.all(np.diff(params.spike_time(r)) < 0))
    report(3, "coding endpoints exact and latency strictly decreasing",
           end_hi < 1e-9 and end_lo < 1e-9 and end_lin < 1e-9 and monotone,
           f"|C(r_max)| {end_hi:.1e}, |C(r_min)-t_w| {end_lo:.1e}")


def test_c04_entropy_ordering(cfg, dataset):
    recordings, _, _ = dataset
    responses = pooled_responses(recordings)
    t_w, r_min = cfg["coding.t_w_ms"], cfg["coding.r_min"]
    entropies = {}
    for kind in ("log", "linear"):
        params = fit_coding(responses, r_min, t_w, kind=kind)
        times = np.concatenate([encode(c1, params, "multiscale").times
                                for rec in recordings for c1 in rec.segments])
        entropies[kind] = spike_entropy(times, 20.0, t_w)
    gap = entropies["log"] - entropies["linear"]
    report(4, "log coding beats linear coding by > 0.5 bits of entropy",
           gap > 0.5,
           f"H_log {entropies['log']:.2f}, H_linear {entropies['linear']:.2f}")


def test_c05_correlation_ordering(cfg, bank):
    summary = CcSummary()
    for i, angle in enumerate((0.0, 45.0, 90.0, 135.0)):
        for r in range(10):
            spec = SynthSpec(kind="bar", angle_deg=angle,
                             seed=derive_seed(105, f"bar-{i}-{r}"))
            rec = recording_features(synthesize(spec), cfg.msd_config(), bank,
                                     cfg["feature.tau_leak_ms"], i)
            for c1 in rec.segments:
                summary.add_sample(c1)
    gap = summary.mean_scale_cc - summary.mean_orientation_cc
    report(5, "between-scale CC exceeds between-orientation CC by > 0.05",
           gap > 0.05,
           f"scale {summary.mean_scale_cc:.3f}, "
           f"orientation {summary.mean_orientation_cc:.3f}")


def test_c06_fusion_accounting(cfg, dataset):
    recordings, _, _ = dataset
    ratios_ok = True
    for (n_s, n_th, h, w) in ((4, 4, 16, 16), (4, 4, 13, 9), (4, 4, 1, 50)):
        base = n_fusion_addresses("multiscale", n_s, n_th, h, w)
        ratios_ok &= n_fusion_addresses("multi_orientation", n_s, n_th, h, w) == base
        ratios_ok &= n_fusion_addresses("none", n_s, n_th, h, w) == 4 * base
        ratios_ok &= n_fusion_addresses("full", n_s, n_th, h, w) * 4 == base
    responses = pooled_responses(recordings)
    params = fit_coding(responses, cfg["coding.r_min"], cfg["coding.t_w_ms"])
    c1s = [c1 for rec in recordings[:6] for c1 in rec.segments]
    counts = {mode: sum(len(encode(c1, params, mode)) for c1 in c1s)
              for mode in FUSION_MODES}
    same_spikes = len(set(counts.values())) == 1
    report(6, "fusion addresses stand 1:1:4:1/4 and spike totals match",
           ratios_ok and same_spikes,
           f"spikes per mode {sorted(set(counts.values()))}")


def test_c07_stdp_micro_oracle():
    cfg = SnnConfig()
    dt = cfg.dt_ms
    net = Network(3, 2, cfg, seed=6)
    net.reset_transient()
    w = net.w.copy()

    schedule = [(2.0, "pre", 0), (4.0, "post", 0), (10.0, "pre", 0),
                (12.0, "post", 0), (20.0, "pre", 1), (30.0, "pre", 0),
                (32.0, "post", 0), (40.0, "pre", 2), (40.0, "post", 0)]
    events_at = {}
    for t, kind, idx in schedule:
        events_at.setdefault(round(t / dt), []).append((kind, idx))

    a_pre = np.zeros(3)
    a_post = a_post2 = 0.0
    last = 0.0
    for k in range(1, int(44.0 / dt) + 1):
        here = events_at.get(k, [])
        pres = sorted(idx for kind, idx in here if kind == "pre")
        posts = [idx for kind, idx in here if kind == "post"]
        if posts:
            net.v_thr[:] = 1e9
            net.v_thr[posts[0]] = -1e9
        else:
            net.v_thr[:] = 1e9
        net.step(input_spikes=pres or None, plasticity=True,
                 adapt_threshold=False)
        if here:
            gap = k * dt - last
            a_pre = a_pre * math.exp(-gap / cfg.tau_apre)
            a_post *= math.exp(-gap / cfg.tau_apost)
            a_post2 *= math.exp(-gap / cfg.tau_apost2)
            last = k * dt
            for idx in pres:
                w[idx, 0] = max(0.0, w[idx, 0] - cfg.a_minus * a_post)
                a_pre[idx] = 1.0
            for _ in posts:
                w[:, 0] += cfg.a_plus * a_pre * a_post2
                a_post = a_post2 = 1.0
    err = np.abs(net.w - w).max()
    report(7, "scripted triplet schedule matches hand-computed weights",
           err < 1e-9, f"max |dw err| {err:.2e}")


def test_c08_normalization_invariants(cfg, dataset):
    recordings, n_classes, _ = dataset
    responses = pooled_responses(recordings, range(12))
    params = fit_coding(responses, cfg["coding.r_min"], cfg["coding.t_w_ms"])
    patterns = [encode(c1, params, "multiscale")
                for rec in recordings[:12] for c1 in rec.segments]
    net = Network(patterns[0].n_addresses, 60, cfg.snn_config(),
                  seed=derive_seed(108, "net"))
    L = cfg["snn.norm_L"]
    worst_sum = 0.0
    for pattern in patterns:
        net.present(pattern, plasticity=True)
        worst_sum = max(worst_sum,
                        np.abs(net.column_sums() - L).max() / L)

    rng = np.random.default_rng(derive_seed(108, "ratios"))
    probe = Network(1024, 60, cfg.snn_config(), seed=0)
    probe.w = rng.uniform(0.01, 2.0, size=(1024, 60))
    ratios_before = probe.w / probe.w[0:1, :]
    from evrec.snn import normalize_weights
    normalize_weights(probe, L)
    sum_err = np.abs(probe.column_sums() - L).max() / L
    ratio_err = np.abs(probe.w / probe.w[0:1, :] - ratios_before).max()
    report(8, "column sums equal L after every plastic presentation",
           worst_sum < 1e-9 and sum_err < 1e-9 and ratio_err < 1e-12,
           f"worst sum err {worst_sum:.2e}, ratio err {ratio_err:.2e}")


def _aligned_time_gap(a: list, b: list) -> float:
    """Best monotone alignment allowing one unmatched spike."""
    if len(a) > len(b):
        a, b = b, a
    if len(b) - len(a) > 1:
        return math.inf
    if len(a) == len(b):
        return max((abs(x - y) for x, y in zip(a, b)), default=0.0)
    best = math.inf
    for drop in range(len(b)):
        trimmed = b[:drop] + b[drop + 1:]
        cost = max((abs(x - y) for x, y in zip(a, trimmed)), default=0.0)
        best = min(best, cost)
    return best


def test_c09_integrator_refinement(cfg, dataset):
    recordings, _, _ = dataset
    responses = pooled_responses(recordings, range(12))
    params = fit_coding(responses, cfg["coding.r_min"], cfg["coding.t_w_ms"])
    patterns = [encode(c1, params, "multiscale")
                for rec in recordings[:12] for c1 in rec.segments]

    def trained_network():
        net = Network(patterns[0].n_addresses, 60, cfg.snn_config(), seed=5)
        order = np.random.default_rng(17).permutation(len(patterns))
        for i in order:
            net.present(patterns[i], plasticity=True)
        return net

    ok = True
    details = []
    for stride in (3, 4):
        src = patterns[0]
        probe = type(src)(addresses=src.addresses[::stride].copy(),
                          times=src.times[::stride].copy(),
                          n_addresses=src.n_addresses, t_w=src.t_w,
                          fusion=src.fusion)
        rasters = {}
        for dt in (0.5, 0.25):
            net = trained_network()
            res = net.present(probe, plasticity=False, dt_ms=dt,
                              record_raster=True)
            per = {n: [] for n in range(60)}
            for n, t in zip(res.raster_neurons, res.raster_times):
                per[int(n)].append(float(t))
            rasters[dt] = (res.counts, per)
        c_half, r_half = rasters[0.5]
        c_quarter, r_quarter = rasters[0.25]
        count_gap = int(np.abs(c_half - c_quarter).max())
        time_gap = max(_aligned_time_gap(r_half[n], r_quarter[n])
                       for n in range(60))
        ok &= count_gap <= 1 and time_gap < 1.0
        details.append(f"1/{stride}: counts {c_half.sum()}/{c_quarter.sum()} "
                       f"dcount {count_gap} dtime {time_gap:.2f}ms")
    report(9, "halving dt moves counts by <= 1 and spike times by < 1 ms",
           ok, "; ".join(details))


def test_c10_end_to_end_recognition(cfg, dataset):
    recordings, n_classes, build_time = dataset
    t0 = time.perf_counter()
    accuracies = [run_split_experiment(recordings, n_classes, cfg, run_seed=r).accuracy
                  for r in range(10)]
    elapsed = build_time + (time.perf_counter() - t0)
    mean = float(np.mean(accuracies))
    report(10, "3-class desk-scale recognition >= 0.90 over 10 runs",
           mean >= 0.90 and elapsed < 600.0,
           f"mean {mean:.3f}, accs {['%.2f' % a for a in accuracies]}, "
           f"{elapsed:.0f}s")


def test_c11_training_determinism(tmp_path):
    data = tmp_path / "data"
    code = cli_main(["--seed", "21", "--out", str(data),
                     "--set", "synth.per_class=6", "synth"])
    assert code == 0
    payloads = []
    for name in ("m1", "m2"):
        out = tmp_path / name
        code = cli_main(["--seed", "21", "--out", str(out),
                         "train", "--data", str(data / "manifest.csv")])
        assert code == 0
        payloads.append((out / "model.evm").read_bytes())
    report(11, "training twice with one seed gives bitwise-equal models",
           payloads[0] == payloads[1],
           f"model size {len(payloads[0])} bytes")
