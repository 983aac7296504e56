#!/usr/bin/env python3
"""Smoke test for the vmr_py extension module.

Builds are expected to exist already:

    cargo build -p vmr-py --release

The script locates the compiled cdylib, stages it as an importable module,
and drives one small end-to-end pass: gradient check, synthetic corpus,
training, evaluation, and a single query.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def stage_module(workdir: Path) -> None:
    candidates = [
        REPO / "target" / "release" / "libvmr_py.so",
        REPO / "target" / "debug" / "libvmr_py.so",
        REPO / "target" / "release" / "libvmr_py.dylib",
        REPO / "target" / "debug" / "libvmr_py.dylib",
    ]
    for built in candidates:
        if built.exists():
            shutil.copy(built, workdir / "vmr_py.so")
            sys.path.insert(0, str(workdir))
            return
    sys.exit(
        "error: no built extension found; run `cargo build -p vmr-py --release` first"
    )


def check(name: str, condition: bool, detail: str = "") -> None:
    if not condition:
        sys.exit(f"FAIL {name}: {detail}")
    print(f"PASS {name}" + (f" ({detail})" if detail else ""))


def main() -> None:
    workdir = Path(tempfile.mkdtemp(prefix="vmr_smoke_"))
    stage_module(workdir)
    import vmr_py

    print(f"vmr_py {vmr_py.__version__} loaded from {workdir}")

    # Vector primitive.
    sim = vmr_py.cosine_similarity([1.0, 0.0], [0.0, 1.0])
    check("cosine_similarity orthogonal", abs(sim) < 1e-12, f"sim={sim}")

    # Gradient oracle on a couple of seeds.
    errs = vmr_py.gradcheck(seed=5, seeds=2)
    worst = max(errs.values())
    check(
        "gradcheck",
        len(errs) == 7 and worst <= 1e-4,
        f"7 losses, max rel err {worst:.2e}",
    )

    # Synthetic corpus -> train -> evaluate -> query.
    data_dir = workdir / "corpus"
    pairs = vmr_py.synth(str(data_dir), pairs=40, seed=11)
    check("synth", pairs == 40 and (data_dir / "manifest.txt").exists(), f"{pairs} pairs")

    ckpt = workdir / "model.ckpt"
    summary = vmr_py.train(
        str(data_dir),
        str(ckpt),
        seed=11,
        ablation="interactive",
        epochs=8,
    )
    check(
        "train",
        ckpt.exists() and summary["steps"] > 0 and math.isfinite(summary["final_total"]),
        f"{summary['steps']} steps, final L_total {summary['final_total']:.4f}",
    )

    report = vmr_py.evaluate(str(ckpt), str(data_dir))
    recall = report["recall"]
    ks = sorted(recall)
    check(
        "evaluate",
        ks == [1, 5, 10, 15, 20, 25]
        and all(recall[a] <= recall[b] for a, b in zip(ks, ks[1:]))
        and report["num_queries"] == 12,
        f"Recall@1={recall[1]:.1f} Recall@25={recall[25]:.1f} over {report['num_queries']} queries",
    )

    hits = vmr_py.query(str(ckpt), str(data_dir), "v00000", k=3)
    check(
        "query",
        len(hits) == 3 and all(mid.startswith("m") for mid, _ in hits),
        f"top hit {hits[0][0]} sim {hits[0][1]:.3f}",
    )

    # Determinism across a re-train with the same seed.
    ckpt2 = workdir / "model2.ckpt"
    vmr_py.train(str(data_dir), str(ckpt2), seed=11, ablation="interactive", epochs=8)
    check(
        "determinism",
        ckpt.read_bytes() == ckpt2.read_bytes(),
        "identical checkpoints for identical seeds",
    )

    print("smoke test complete")


if __name__ == "__main__":
    main()
