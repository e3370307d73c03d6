"""Scalar reference of the simulated compression step.

Prints the trajectory used by tests/golden_simulation.rs as IEEE-754 bit patterns.
"""
import struct

MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & MASK
    return h


def splitmix64(x: int) -> int:
    z = (x + GOLDEN) & MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def unit_float(x: int) -> float:
    return (x >> 11) / float(1 << 53)


def step(state, canonical_id, gamma, ft, seed):
    params, flops, acc, consumed = state
    h = fnv1a64(canonical_id.encode())
    u = unit_float(splitmix64(seed ^ h))
    u2 = unit_float(splitmix64(seed ^ h ^ GOLDEN))
    params2 = params * (1.0 - gamma)
    flops2 = flops * (1.0 - gamma * min(max(0.8 + 0.4 * u2, 0.0), 1.0))
    damage = gamma * (0.08 + 0.12 * u)
    recovery = min(0.04 * ft / (1.0 + consumed), 0.9 * damage)
    acc2 = min(max(acc * (1.0 - damage + recovery), 0.0), 1.0)
    return (params2, flops2, acc2, consumed + ft)


def bits(x: float) -> str:
    return "0x%016x" % struct.unpack("<Q", struct.pack("<d", x))[0]


if __name__ == "__main__":
    state = (9e5, 2.7e8, 0.9104, 0.0)
    for i in range(3):
        state = step(state, "C3|HP1=*0.3|HP2=x0.20|HP6=0.9", 0.20, 0.3, 42)
        print(i + 1, [bits(v) for v in state], state)
