"""Smoke test for the locdreamer_py extension.

Build first with `cargo build --release -p locdreamer-py`. The script loads
the module from the import path if installed, otherwise from target/.
"""

import importlib.util
import math
import pathlib
import sys

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load():
    try:
        import locdreamer_py

        return locdreamer_py
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "liblocdreamer_py.so"
        if lib.exists():
            spec = importlib.util.spec_from_file_location("locdreamer_py", lib)
            mod = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(mod)
            return mod
    sys.exit("locdreamer_py not built; run `cargo build --release -p locdreamer-py`")


def main():
    ld = load()

    square = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0), (10.0, 10.0)]
    centre = ld.gdop((5.0, 5.0), square)
    corner = ld.gdop((9.0, 9.5), square[:3])
    assert math.isfinite(centre) and centre > 0.0
    assert corner > centre, (corner, centre)

    assert ld.greedy_subset([0.1, 2.0, -1.0, 1.5], 2) == [1, 3]
    order, logp = ld.sample_subset([0.0, 0.0, 0.0, 0.0], 2, seed=3)
    assert len(set(order)) == 2
    assert abs(logp - math.log(1 / 12)) < 1e-12

    assert abs(ld.cosine_lr(0, 100, 1e-3) - 1e-3) < 1e-15

    anchors = [(1, 0.0, 0.0), (2, 10.0, 0.0), (3, 0.0, 10.0), (4, 10.0, 10.0)]
    truth = [(2.0 + 0.1 * t, 3.0) for t in range(30)]
    readings = [
        {a: math.hypot(x - ax, y - ay) for a, ax, ay in anchors} for x, y in truth
    ]
    est = ld.ekf_track(anchors, readings, dt=0.1, sigma_acc=0.01, sigma_n=1e-3)
    assert len(est) == len(truth)
    err = math.hypot(est[-1][0] - truth[-1][0], est[-1][1] - truth[-1][1])
    assert err < 1e-2, err

    try:
        ld.greedy_subset([1.0, 2.0], 3)
    except ValueError:
        pass
    else:
        raise AssertionError("k > A must raise")

    print("python smoke test ok")


if __name__ == "__main__":
    main()
