"""Scratch calibration for the qualitative-trend experiments (not shipped)."""
import sys
import time

import numpy as np

from feel_sched.config import ExperimentConfig, build_bundle
from feel_sched.trainer import run_experiment


def trend_config(policy, m, rho=1e-5, rounds=400, bandwidth=1e6, sep=2.5, dim=10,
                 spd=66, lr=0.2, flops=100.0, placement=7):
    return ExperimentConfig.from_dict({
        "fleet": {"devices": 30, "samples_per_device": spd, "compute_flops": 1e9,
                  "placement_seed": placement},
        "data": {"task": "binary_margin", "dim": dim, "separation": sep,
                 "partition": "two_class_split", "seed": 11, "test_fraction": 0.2,
                 "reg_lambda": 0.01},
        "channel": {"bandwidth_hz": bandwidth, "fading": "rayleigh_block"},
        "payload": {"bits_per_element": 16, "flops_per_sample": flops},
        "scheduler": {"policy": policy, "devices_per_round": m,
                      **({"rho": rho} if policy == "importance_channel" else {})},
        "trainer": {"rounds": rounds, "lr": {"kind": "constant", "eta": lr}},
    })


def run_policy(policy, m, seeds, **kw):
    cfg = trend_config(policy, m, **kw)
    bundle = build_bundle(cfg)
    out = []
    for seed in seeds:
        reports = run_experiment(bundle, seed)
        out.append(reports)
    return out


def time_to_target(reports, target):
    for r in reports:
        if r.accuracy is not None and r.accuracy >= target:
            return r.cumulative_s
    return np.inf


def summarize(tag, runs, target=None):
    finals = np.array([r[-1].accuracy for r in runs])
    med_final = np.median(finals)
    line = f"{tag:28s} final med {med_final:.4f} (min {finals.min():.3f} max {finals.max():.3f})"
    if target is not None:
        times = np.array([time_to_target(r, target) for r in runs])
        reached = np.isfinite(times).sum()
        med_t = np.median(times)
        line += f"  t2t med {med_t:.3e} reached {reached}/{len(times)}"
    print(line, flush=True)
    return finals


def main(rho=1e-5, sep=2.5, lr=0.2, rounds=400, m2=5, seeds=20, dim=10):
    seeds = list(range(1, seeds + 1))
    t0 = time.time()
    for m in (1, m2):
        prop = run_policy("importance_channel", m, seeds, rho=rho, sep=sep, lr=lr, rounds=rounds, dim=dim)
        target = float(np.percentile([r[-1].accuracy for r in prop], 90))
        print(f"--- M={m} target(p90 of proposed finals)={target:.4f}")
        summarize(f"proposed rho={rho}", prop, target)
        imp = run_policy("importance_aware", m, seeds, sep=sep, lr=lr, rounds=rounds, dim=dim)
        summarize("importance_aware", imp, target)
        cha = run_policy("channel_aware", m, seeds, sep=sep, lr=lr, rounds=rounds, dim=dim)
        summarize("channel_aware", cha, target)
        tp = np.median([time_to_target(r, target) for r in prop])
        ti = np.median([time_to_target(r, target) for r in imp])
        fp = np.median([r[-1].accuracy for r in prop])
        fc = np.median([r[-1].accuracy for r in cha])
        print(f"  (a) prop {tp:.3e} < imp {ti:.3e}: {tp < ti}   "
              f"(b) cha {fc:.4f} < prop {fp:.4f}: {fc < fp}")
    print(f"total {time.time()-t0:.1f}s")


if __name__ == "__main__":
    kwargs = {}
    for arg in sys.argv[1:]:
        key, _, value = arg.partition("=")
        kwargs[key] = float(value) if "." in value or "e" in value else int(value)
    main(**kwargs)
