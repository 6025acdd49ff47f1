"""Time the compiled kernels against the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat N] [--json PATH]

Each row reports the best of ``--repeat`` timings per backend and the
speedup of the compiled backend. The end-to-end rows run a short
Crank-Nicolson evolution and a ground-state solve through the public API
with the backend switched globally.
"""

import argparse
import json
import timeit

import numpy as np

from nlselab import _kernels_py, kernels
from nlselab.evolution import EvolveOpts, evolve
from nlselab.grid import DomainSpec, build_grid
from nlselab.ground_state import GroundStateOptions, minimize_on_sphere
from nlselab.model import ModelSpec, Nonlinearity


def _kernel_cases(rng):
    cases = []
    for shape in ((4001,), (401, 401), (81, 81, 81)):
        v = rng.normal(size=shape) + 1j * rng.normal(size=shape)
        mask = np.zeros(shape, dtype=bool)
        mask[tuple(slice(1, -1) for _ in shape)] = True
        spacing = (0.01,) * len(shape)
        cases.append((f"laplacian {'x'.join(map(str, shape))}",
                      lambda mod, v=v, s=spacing, m=mask: mod.laplacian(v, s, m)))
    s = np.abs(rng.normal(size=10**6))
    cases.append(("sin_power_quotient 1e6", lambda mod: mod.sin_power_quotient(s, 3.0, 1e-8)))
    n = 4001
    lower = np.full(n - 1, -1.0 + 0j)
    diag = np.full(n, 2.0 + 0.5j)
    rhs = rng.normal(size=n) + 1j * rng.normal(size=n)

    def tri(mod):
        mod.Tridiagonal(lower, diag, lower).solve(rhs)
    cases.append(("tridiagonal factor+solve 4001", tri))
    return cases


def _end_to_end_cases():
    model = ModelSpec(W=Nonlinearity("sin_power", 3.0))
    g1 = build_grid(DomainSpec.box([-1.0], [1.0]), 401)
    g2 = build_grid(DomainSpec.box([-1.0, -1.0], [1.0, 1.0]), 65)
    psi1 = g1.sample(lambda x: np.exp(-x**2 / 0.1)) * np.exp(1j * g1.axes[0])
    opts = EvolveOpts(dt=1e-3, T=0.2, sample_every=50)
    gs_opts = GroundStateOptions(tol_res=1e-8, n_starts=2)
    return [
        ("evolve 1D 401 nodes, 200 steps", lambda: evolve(psi1, model, 1.0, opts)),
        ("ground state 2D 65^2", lambda: minimize_on_sphere(model, g2, 1.0, gs_opts)),
    ]


def _best(func, repeat):
    return min(timeit.repeat(func, number=1, repeat=repeat))


def run(repeat: int) -> list[dict]:
    rows = []
    backends = kernels.available_backends()
    compiled = None
    if "cython" in backends:
        from nlselab import _kernels as compiled
    for name, func in _kernel_cases(np.random.default_rng(0)):
        row = {"case": name, "python": _best(lambda: func(_kernels_py), repeat)}
        if compiled is not None:
            row["cython"] = _best(lambda: func(compiled), repeat)
        rows.append(row)
    previous = kernels.BACKEND
    try:
        for name, func in _end_to_end_cases():
            row = {"case": name}
            for backend in backends:
                kernels.use_backend(backend)
                row[backend] = _best(func, repeat)
            rows.append(row)
    finally:
        kernels.use_backend(previous)
    for row in rows:
        if "cython" in row:
            row["speedup"] = row["python"] / row["cython"]
    return rows


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5, help="timings per case (best is kept)")
    parser.add_argument("--json", metavar="PATH", help="also write the rows as JSON")
    args = parser.parse_args(argv)
    rows = run(args.repeat)
    print(f"{'case':<34}{'python [s]':>12}{'cython [s]':>12}{'speedup':>9}")
    for r in rows:
        cy = f"{r['cython']:12.5f}" if "cython" in r else f"{'n/a':>12}"
        sp = f"{r['speedup']:9.2f}" if "speedup" in r else f"{'':>9}"
        print(f"{r['case']:<34}{r['python']:12.5f}{cy}{sp}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
