"""Compare the compiled and pure-Python byte-scanning kernels.

Times ``split_message`` and ``scan_parameters`` on discovery traffic from
simnet, then a full monitor scan with each backend swapped in.

    python3 benchmarks/bench_kernels.py --repeat 5
"""

import argparse
import statistics
import sys
import time

from graphguard import _kernels, _pure, monitor
from graphguard.discovery import encapsulation
from graphguard.simnet import emit, random_messages, random_spec
from graphguard.wire import parse_data, parse_message

try:
    from graphguard import _speedups
except ImportError:
    _speedups = None


def build_corpus(seed, specs):
    datagrams = []
    for i in range(specs):
        datagrams.extend(raw for _, raw in emit(random_spec(seed + i, max_participants=8, max_endpoints=40)))
    messages = [raw for raw in datagrams if raw[:4] == b"RTPS"] + random_messages(seed, 2000)
    payloads = []
    for raw in messages:
        for sm in parse_message(raw).submessages:
            if sm.submessage_id != 0x15:
                continue
            try:
                payload = parse_data(sm).serialized_payload
                little, _ = encapsulation(payload)
            except Exception:
                continue
            payloads.append((payload, little))
    return datagrams, messages, payloads


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times), statistics.median(times)


def bench_backend(mod, datagrams, messages, payloads, repeat):
    def split():
        for raw in messages:
            mod.split_message(raw)

    def scan_params():
        for payload, little in payloads:
            mod.scan_parameters(payload, 4, little)

    def full_scan():
        old = _kernels.split_message, _kernels.scan_parameters
        _kernels.split_message, _kernels.scan_parameters = mod.split_message, mod.scan_parameters
        try:
            monitor.scan(datagrams, monitor.default_cve_db())
        finally:
            _kernels.split_message, _kernels.scan_parameters = old

    return {
        "split_message": best_of(split, repeat),
        "scan_parameters": best_of(scan_params, repeat),
        "monitor scan": best_of(full_scan, repeat),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--specs", type=int, default=50, help="random simnet specs in the corpus")
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args(argv)

    datagrams, messages, payloads = build_corpus(args.seed, args.specs)
    print(f"corpus: {len(datagrams)} datagrams, {len(messages)} RTPS messages, {len(payloads)} parameter lists")
    backends = {"python": _pure}
    if _speedups is not None:
        backends["cython"] = _speedups
    else:
        print("compiled extension not built; timing the pure-Python backend only")

    results = {name: bench_backend(mod, datagrams, messages, payloads, args.repeat)
               for name, mod in backends.items()}
    print(f"{'kernel':<16} {'backend':<8} {'best ms':>10} {'median ms':>10} {'speedup':>8}")
    for kernel in results["python"]:
        base = results["python"][kernel][0]
        for name, res in results.items():
            best, median = res[kernel]
            print(f"{kernel:<16} {name:<8} {best * 1e3:>10.2f} {median * 1e3:>10.2f} {base / best:>7.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
