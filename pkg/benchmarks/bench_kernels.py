"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 20]

Shapes follow the desk model: batch 32, 4 heads, sequences of 64 to 256.
Also times one training step of the desk model under each backend.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from sitcode.numkit import _pykernels, kernels


def _best(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_rows(repeat: int):
    comp = kernels.compiled_backend
    rng = np.random.default_rng(0)
    for dtype in (np.float32, np.float64):
        for l in (64, 128, 256):
            x = rng.normal(size=(32, 4, l, l)).astype(dtype)
            allowed = (rng.random((32, 1, l, l)) < 0.3) | np.eye(l, dtype=bool)
            m = allowed.view(np.uint8)
            y = _pykernels.masked_softmax_fwd(x, m)
            g = rng.normal(size=x.shape).astype(dtype)
            cases = {
                "softmax fwd": (lambda b: b.masked_softmax_fwd(x, m)),
                "softmax bwd": (lambda b: b.masked_softmax_bwd(y, g)),
            }
            h = rng.normal(size=(32 * l, 64)).astype(dtype)
            gain, bias = np.ones(64, dtype), np.zeros(64, dtype)
            _, xhat, rstd = _pykernels.layer_norm_fwd(h, gain, bias, 1e-5)
            gh = rng.normal(size=h.shape).astype(dtype)
            cases["layernorm fwd"] = lambda b: b.layer_norm_fwd(h, gain, bias, 1e-5)
            cases["layernorm bwd"] = lambda b: b.layer_norm_bwd(gh, xhat, rstd, gain)
            for name, fn in cases.items():
                py = _best(lambda: fn(_pykernels), repeat)
                cy = _best(lambda: fn(comp), repeat) if comp is not None else float("nan")
                yield name, np.dtype(dtype).name, l, py, cy


def train_step_rows(repeat: int):
    from sitcode.sitmodel import SitConfig
    from sitcode.trainer import collate, gen_corpus
    from sitcode.trainer.loop import prepare
    import sitcode.numkit as nk

    cfg = SitConfig(d_model=64, heads=4, d_ff=128, encoder_layers=4, decoder_layers=2,
                    max_src_len=128, max_tgt_len=12, dropout=0.1, rpe_clip=8)
    rows = gen_corpus(32, 0)
    bundle = prepare(rows, cfg)
    batch = collate(bundle.examples(rows), cfg)

    def step():
        bundle.model.zero_grad()
        loss, _, _ = bundle.model.loss(batch)
        nk.backward(loss)

    out = {}
    for name in ("python", "cython"):
        if name == "cython" and kernels.compiled_backend is None:
            out[name] = float("nan")
            continue
        kernels.use_backend(name)
        out[name] = _best(step, max(3, repeat // 4))
    if kernels.compiled_backend is not None:
        kernels.use_backend("cython")
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    print(f"compiled backend available: {kernels.compiled_backend is not None}")
    print(f"{'kernel':<15}{'dtype':<9}{'l':>5}{'numpy ms':>11}{'cython ms':>11}{'speedup':>9}")
    for name, dt, l, py, cy in kernel_rows(args.repeat):
        print(f"{name:<15}{dt:<9}{l:>5}{py * 1e3:>11.2f}{cy * 1e3:>11.2f}{py / cy:>9.2f}")
    step = train_step_rows(args.repeat)
    print(f"\ndesk model train step (batch 32): numpy {step['python'] * 1e3:.1f} ms, "
          f"cython {step['cython'] * 1e3:.1f} ms, speedup {step['python'] / step['cython']:.2f}")


if __name__ == "__main__":
    main()
