"""Smoke test for the Python extension. Build it first:

    cd crates/python && maturin build --release -o dist && pip install dist/*.whl
"""

import json
import math
import os
import sys
import tempfile

import kan_verify_py as kv


def check(cond, message):
    if not cond:
        print(f"FAIL {message}")
        sys.exit(1)
    print(f"ok   {message}")


def main():
    net = kv.Network.benchmark("exp")
    check(net.input_dim == 2 and net.output_dim == 1, "benchmark network shape")

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "exp.kan.json")
        with open(path, "w") as f:
            f.write(net.to_json())
        loaded = kv.Network.load(path)
    doc = json.loads(loaded.to_json())
    check(doc["version"] == 1 and doc["layer_widths"] == net.layer_widths, "model file round trip")

    x = [0.05, -0.02]
    check(loaded.eval(x) == net.eval(x), "reloaded network evaluates identically")
    target = math.exp(math.sin(math.pi * x[0]) + x[1] ** 2)
    check(abs(net.eval(x)[0] - target) < 5e-3, "network tracks its target function")

    key = net.unit_keys()[0]
    pwa = kv.optimal_abstraction(net, key, 4, intervals=64)
    check(pwa["pieces"] <= 4 and len(pwa["breakpoints"]) == pwa["pieces"] + 1, "optimal abstraction shape")

    alloc = kv.allocate(net)
    check(alloc["global_bound"] <= alloc["delta"], "allocation meets its budget")

    lower, upper = [-0.1, -0.1], [0.1, 0.1]
    r = kv.verify_range(net, lower, upper)
    lo, hi = kv.sampled_range(net, lower, upper, samples=5000)[0]
    check(r["lower"] <= lo and hi <= r["upper"], "verified range contains sampled range")
    check(r["max_solve"]["status"] == "optimal", "solver closed the gap")

    sweep = kv.sensitivity(net, lower, upper, epsilon=0.01, samples=1000)
    check(len(sweep) == 2, "sensitivity covers every feature")
    check(all(s["max_divergence"] >= s["empirical_divergence"] for s in sweep), "sensitivity bound is sound")
    check(sum(s["most_sensitive"] for s in sweep) == 1, "one feature flagged")

    try:
        kv.allocate(net, delta=1e-9)
    except ValueError as e:
        check("minimum achievable" in str(e), "infeasible budget raises ValueError")
    else:
        check(False, "infeasible budget raises ValueError")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
