#!/usr/bin/env python3
"""Smoke test for the convpred_py extension module.

Builds nothing itself: run `cargo build -p convpred-py` (or `--release`)
first, then `python3 python/smoke_test.py`. The script copies the cdylib
next to a temp directory under the importable name and exercises the STFT,
the simulator, the pipeline, and the metric.
"""

import math
import pathlib
import random
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def import_module():
    candidates = [
        ROOT / "target" / "release" / "libconvpred_py.so",
        ROOT / "target" / "debug" / "libconvpred_py.so",
    ]
    built = [path for path in candidates if path.exists()]
    if not built:
        sys.exit(
            "libconvpred_py.so not found; run `cargo build -p convpred-py` first"
        )
    newest = max(built, key=lambda path: path.stat().st_mtime)
    staging = pathlib.Path(tempfile.mkdtemp(prefix="convpred-py-"))
    shutil.copy2(newest, staging / "convpred_py.so")
    sys.path.insert(0, str(staging))
    import convpred_py

    return convpred_py


def check(label, condition, detail):
    status = "ok" if condition else "FAIL"
    print(f"{label}: {status} ({detail})")
    if not condition:
        sys.exit(1)


def main():
    cp = import_module()
    rng = random.Random(7)

    config = cp.StftConfig()
    check(
        "config defaults",
        (config.window_len, config.hop, config.fft_size, config.bins)
        == (256, 64, 256, 129),
        repr(config),
    )

    samples = [[rng.uniform(-1.0, 1.0) for _ in range(5000)] for _ in range(2)]
    spec = cp.analyze(samples, config)
    check(
        "analyze shape",
        spec.channels == 2 and spec.bins == 129 and spec.frames > 0,
        repr(spec),
    )
    back = cp.synthesize(spec)
    err = math.sqrt(
        sum(
            (a - b) ** 2
            for row_a, row_b in zip(samples, back)
            for a, b in zip(row_a, row_b)
        )
    )
    scale = math.sqrt(sum(v * v for row in samples for v in row))
    check("stft roundtrip", err / scale < 1e-6, f"relative error {err / scale:.3e}")

    value = cp.si_sdr(samples[0], samples[0])
    check("si_sdr cap", abs(value - 80.0) < 1e-9, f"self score {value:.1f} dB")
    scaled = [3.5 * v for v in samples[0]]
    drift = abs(cp.si_sdr(scaled, samples[0]) - 80.0)
    check("si_sdr scale invariance", drift < 1e-9, f"drift {drift:.3e} dB")

    scene = cp.simulate_scene(
        num_speakers=2,
        num_channels=2,
        t60_seconds=0.3,
        noise_snr_db=25.0,
        duration_seconds=1.5,
        seed=42,
    )
    check(
        "scene shape",
        scene.num_speakers == 2 and scene.num_channels == 2,
        repr(scene),
    )
    again = cp.simulate_scene(
        num_speakers=2,
        num_channels=2,
        t60_seconds=0.3,
        noise_snr_db=25.0,
        duration_seconds=1.5,
        seed=42,
    )
    check(
        "scene determinism",
        scene.mixture() == again.mixture(),
        "identical mixtures for the same seed",
    )

    chain = (
        "[stage estimate]\n"
        "kind=residual_reverb\n"
        "est_snr_db=10\n"
        "\n"
        "[stage fcp]\n"
        "\n"
        "[stage mvdr]\n"
        "\n"
        "[stage evaluate]\n"
    )
    result = cp.run_pipeline(chain, scene)
    check(
        "pipeline chain",
        result.chain == "estimate,fcp,mvdr,evaluate",
        repr(result),
    )
    check(
        "pipeline improvement",
        result.improvement_db is not None and result.improvement_db > 0.0,
        f"improvement {result.improvement_db:.2f} dB over the mixture",
    )
    enhanced = result.enhanced(0)
    check(
        "enhanced length",
        len(enhanced) == len(scene.mixture()[0]),
        f"{len(enhanced)} samples",
    )

    print("smoke test passed")


if __name__ == "__main__":
    main()
