"""Smoke test for the obukhov extension module.

Build and install first:
    pip install --no-build-isolation ./crates/py
"""

import math
import sys

import obukhov


def close(a, b, rel):
    return abs(a - b) <= rel * max(abs(a), abs(b))


def main():
    lad = obukhov.Ladder.figure2(10)
    assert lad.k_max == 10
    assert len(lad.n) == 11 and len(lad.amp) == 11 and len(lad.delta) == 10
    for k, n in enumerate(lad.n):
        assert close(n, 1.5 ** (1.15 ** k), 1e-12), (k, n)
        assert close(lad.amp[k], n ** 2.4, 1e-12), (k, lad.amp[k])
    assert close(lad.horizon, 1.0 / lad.amp[0], 1e-15)

    x = list(lad.amp)
    f = obukhov.rhs(lad, x)
    assert all(math.isfinite(v) for v in f)

    y = obukhov.convert(lad, x, "rescaled", "linf")
    back = obukhov.convert(lad, y, "linf", "rescaled")
    assert all(close(a, b, 1e-14) for a, b in zip(x, back))

    times, states = obukhov.backward(lad)
    assert times[0] == 0.0 and close(times[-1], -lad.horizon, 1e-15)
    assert len(states) == len(times) and len(states[0]) == 11

    errors = obukhov.roundtrip(lad)
    assert max(errors) <= 1e-3, errors

    drift = obukhov.energy_drift(obukhov.Ladder.figure2(12))
    assert drift <= 1e-8, drift

    try:
        obukhov.rhs(lad, x, form="sobolev")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown form accepted")

    try:
        obukhov.backward(lad, rel_tol=0.0)
    except ValueError:
        pass
    else:
        raise AssertionError("zero tolerance accepted")

    print(f"ok: roundtrip error {max(errors):.3e}, energy drift {drift:.3e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
