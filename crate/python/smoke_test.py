#!/usr/bin/env python3
"""Smoke test for the gradlab_py extension module.

Builds a tiny classifier, then cross-checks the Rust implementations
against numpy/scipy where both sides compute the same quantity:

  * analytic weight gradients vs numpy central differences
  * power-iteration Hessian eigenvalues vs numpy.linalg.eigvalsh of the
    dense Hessian
  * Spearman correlation vs scipy.stats.spearmanr
  * a short local-mode attack must collapse the matching loss
  * the full experiment pipeline must write its artifacts

Run `cargo build -p gradlab-py --release` first, then
`python3 python/smoke_test.py`.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def import_gradlab_py():
    """Copy the built cdylib next to a temp dir under the importable name."""
    candidates = [
        ROOT / "target" / "release" / "libgradlab_py.so",
        ROOT / "target" / "debug" / "libgradlab_py.so",
        ROOT / "target" / "release" / "libgradlab_py.dylib",
        ROOT / "target" / "debug" / "libgradlab_py.dylib",
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit("build the extension first: cargo build -p gradlab-py --release")
    stage = Path(tempfile.mkdtemp(prefix="gradlab_py_"))
    suffix = ".so" if built.suffix == ".so" else ".so"  # CPython loads .so on mac too
    shutil.copy2(built, stage / f"gradlab_py{suffix}")
    sys.path.insert(0, str(stage))
    import gradlab_py

    return gradlab_py


def check(name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] {name}" + (f"  ({detail})" if detail else ""))
    if not ok:
        sys.exit(1)


def main():
    gl = import_gradlab_py()
    import numpy as np
    from scipy import stats

    H = W = 4
    spec = gl.NetSpec([H * W, 8, 2], "tanh")
    check("spec weight count", spec.weight_count() == (16 + 1) * 8 + (8 + 1) * 2)

    data = gl.gen_synthetic(H, W, 2, 40, seed=11, blob_sigma=1.2, noise=0.15)
    w = gl.train_sgd(spec, data, epochs=12, lr=0.1, seed=3)
    w2 = gl.train_sgd(spec, data, epochs=12, lr=0.1, seed=3)
    check("training deterministic", w.flat() == w2.flat())

    x, y = data[0]
    logits = w.forward(x)
    check("forward shape", len(logits) == 2 and all(math.isfinite(v) for v in logits))

    # Gradient vs numpy central differences on a few coordinates.
    # Perturbed weight vectors are injected through the save/load format;
    # the cross-entropy is recomputed in numpy from Rust logits.
    g = np.array(w.grad(x, y))
    flat = np.array(w.flat())
    rng = np.random.default_rng(0)
    coords = rng.choice(len(flat), size=6, replace=False)
    ok = True
    with tempfile.TemporaryDirectory() as td:
        base = Path(td) / "m.json"
        w.save(base, 0)
        import json

        header = json.loads(base.read_text())
        bin_path = Path(td) / header["data_file"]
        raw = np.fromfile(bin_path, dtype="<f8")

        def loss_of(vec):
            vec.astype("<f8").tofile(bin_path)
            wp, _ = gl.Weights.load(base)
            lg = np.array(wp.forward(x))
            m = lg.max()
            return float(m + np.log(np.exp(lg - m).sum()) - lg[y])

        for k in coords:
            h = 1e-6 * max(1.0, abs(float(raw[k])))
            up = raw.copy()
            up[k] += h
            dn = raw.copy()
            dn[k] -= h
            fd = (loss_of(up) - loss_of(dn)) / (2 * h)
            if abs(fd - g[k]) > 1e-5 * max(1e-8, abs(g[k]), 1e-3):
                ok = False
                print(f"  coord {k}: fd {fd} vs analytic {g[k]}")
        raw.astype("<f8").tofile(bin_path)
    check("analytic gradient matches numpy finite differences", ok)

    # Hessian spectra: power iteration vs numpy eigvalsh of the dense form
    rec = gl.compute_proxies(w, x, y, sample_id=0, seed=7)
    for kind, lam_max, lam_min in (
        ("l2", rec.l2_max, rec.l2_min),
        ("cos", rec.cos_max, rec.cos_min),
    ):
        dense = np.array(gl.dense_hessian(w, x, y, kind=kind))
        evals = np.linalg.eigvalsh((dense + dense.T) / 2)
        top, bottom = float(evals[-1]), float(max(evals[0], 0.0))
        check(
            f"{kind} lambda_max vs numpy",
            abs(lam_max - top) <= 1e-6 * max(top, 1e-12),
            f"power {lam_max:.6e} vs numpy {top:.6e}",
        )
        check(
            f"{kind} lambda_min vs numpy",
            abs(lam_min - bottom) <= 1e-6 * max(top, 1e-12),
            f"deflated {lam_min:.6e} vs numpy {bottom:.6e}",
        )
    check(
        "fusion is the geometric mean",
        abs(rec.fusion - math.sqrt(rec.l2_max * rec.cos_min)) < 1e-12,
    )

    # Spearman vs scipy, ties included
    rng = np.random.default_rng(1)
    ok = True
    for _ in range(50):
        n = int(rng.integers(3, 30))
        a = np.floor(rng.uniform(0, 5, n))
        b = np.floor(rng.uniform(0, 5, n))
        if len(set(a)) < 2 or len(set(b)) < 2:
            continue
        want = stats.spearmanr(a, b).statistic
        got = gl.spearman(list(a), list(b))
        if abs(got - want) > 1e-12:
            ok = False
            print(f"  spearman {got} vs scipy {want}")
    check("spearman matches scipy", ok)

    # similarity metrics sanity
    check("mse/ssim/psnr identity", gl.mse(x, x) == 0.0 and gl.ssim(x, x, H, W) == 1.0 and gl.psnr(x, x) == 100.0)

    # short local attack must collapse the matching loss
    target = gl.grad_target(w, x, y)
    cfg = gl.AttackConfig(kind="l2", steps=150, restarts=1, alpha_tv=0.0, init="local:0.1", seed=5)
    res = gl.run_attack(cfg, w, target, x, y, H, W)
    check(
        "local attack reduces gm loss 100x",
        res.final_gm_loss <= res.initial_gm_loss / 100.0,
        f"{res.initial_gm_loss:.3e} -> {res.final_gm_loss:.3e}",
    )
    check("reconstruction close to truth", gl.mse(res.x_rec, x) < 0.01)

    # full pipeline writes its artifacts
    with tempfile.TemporaryDirectory() as td:
        cfg_path = Path(td) / "exp.cfg"
        cfg_path.write_text(
            "model.layers = 16,8,2\nimage.height = 4\nimage.width = 4\n"
            "dataset.sample_count = 4\ndataset.synthetic.classes = 2\n"
            "dataset.synthetic.train_count = 32\nmodel.train.epochs = 8\n"
            "attack.l2.steps = 25\nattack.l2.restarts = 2\n"
            "attack.cos.steps = 25\nattack.cos.restarts = 2\n"
        )
        summary = gl.run_experiment(config_path=cfg_path, seed=9, out=Path(td) / "out")
        samples = Path(td) / "out" / "samples.csv"
        header = samples.read_text().splitlines()[0]
        check(
            "run_experiment artifacts",
            summary["sample_count"] == 4
            and header.startswith("sample_id,label,grad_norm")
            and (Path(td) / "out" / "correlations.csv").exists()
            and (Path(td) / "out" / "report.json").exists(),
        )

    print("all smoke tests passed")


if __name__ == "__main__":
    main()
