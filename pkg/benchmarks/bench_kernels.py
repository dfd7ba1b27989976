"""Compare the compiled im2col/col2im kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Also times one full training step of the desk-scale model under each backend.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from tribrain.numerics import _kernels_py, kernels


def time_call(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_kernels(repeat: int) -> list[tuple[str, float, float | None]]:
    rng = np.random.default_rng(0)
    rows = []
    compiled = kernels._impl if kernels.BACKEND == "compiled" else None
    for shape in [(64, 32, 32, 3), (64, 16, 16, 16), (64, 8, 8, 32)]:
        x = rng.normal(size=shape)
        cols = _kernels_py.im2col(x, 3, 3, 1, 1)
        t_py = time_call(lambda: _kernels_py.im2col(x, 3, 3, 1, 1), repeat)
        t_c = time_call(lambda: compiled.im2col(x, 3, 3, 1, 1), repeat) if compiled else None
        rows.append((f"im2col {shape}", t_py, t_c))
        t_py = time_call(lambda: _kernels_py.col2im(cols, shape, 3, 3, 1, 1), repeat)
        t_c = time_call(lambda: compiled.col2im(cols, shape, 3, 3, 1, 1), repeat) if compiled else None
        rows.append((f"col2im {shape}", t_py, t_c))
    return rows


def bench_train_step(repeat: int) -> float:
    from tribrain.config import desk_config
    from tribrain.control import StopPolicy, run_ticks
    from tribrain.data import synth_shapes
    from tribrain.numerics import backward
    from tribrain.perception import ImageBatch
    from tribrain.training import aggregate_loss, build_model

    cfg = desk_config()
    model = build_model(cfg)
    ds = synth_shapes(cfg.train.batch_size, 32, 3, seed=0)
    policy = StopPolicy.from_config(cfg.policy)
    rng = np.random.default_rng(0)

    def step():
        trace = run_ticks(model, ImageBatch(ds.images, ds.labels), policy, mode="train", rng=rng)
        model.zero_grad()
        backward(aggregate_loss(trace, ds.labels))

    return time_call(step, max(1, repeat // 5))


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20)
    args = p.parse_args()
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':34s} {'numpy ms':>10s} {'compiled ms':>12s} {'speedup':>8s}")
    for name, t_py, t_c in bench_kernels(args.repeat):
        c = f"{1e3 * t_c:12.3f}" if t_c is not None else f"{'n/a':>12s}"
        sp = f"{t_py / t_c:8.2f}" if t_c else f"{'n/a':>8s}"
        print(f"{name:34s} {1e3 * t_py:10.3f} {c} {sp}")
    for name, impl in step_backends():
        print(f"one desk-scale training step ({name}): {time_step_ms(impl, args.repeat):.1f} ms")


def step_backends() -> list[tuple[str, object]]:
    backends = [("numpy", _kernels_py)]
    if kernels.BACKEND == "compiled":
        backends.append(("compiled", kernels._impl))
    return backends


def time_step_ms(impl, repeat: int) -> float:
    saved = kernels._impl
    kernels._impl = impl
    try:
        return 1e3 * bench_train_step(repeat)
    finally:
        kernels._impl = saved


if __name__ == "__main__":
    main()
