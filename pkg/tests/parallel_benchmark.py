import os
import sys
import time

# Stand-alone timing script (not collected by pytest).
# Compares serial and threaded triple synthesis; outputs must be identical.
sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "src"))
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from engines.triple_engine import build_generators, generate_triples
from mocks import get_mock_multitrack

COUNT = 48
SEGMENT_S = 1.0


def timed(tracks, gens, jobs):
    start = time.perf_counter()
    triples = generate_triples(tracks, gens, COUNT, seed=0, jobs=jobs, segment_s=SEGMENT_S)
    return triples, time.perf_counter() - start


def main():
    print("🚀 Starting amsskit parallel synthesis benchmark...")
    tracks = [get_mock_multitrack(seconds=3.0, seed=s) for s in range(4)]
    gens = build_generators(None, ("vocals", "drums", "bass"))
    jobs = os.cpu_count() or 4

    serial, t_serial = timed(tracks, gens, 1)
    parallel, t_parallel = timed(tracks, gens, jobs)
    identical = all(a.equals(b) for a, b in zip(serial, parallel))

    print("\n--- BENCHMARK RESULTS ---")
    print(f"✅ Serial   (1 job):   {t_serial:.2f} s")
    print(f"✅ Parallel ({jobs} jobs): {t_parallel:.2f} s")
    print(f"⏱️  Speed-up: {t_serial / t_parallel:.2f}x")
    print(f"{'✅' if identical else '❌'} Outputs identical: {identical}")
    print("-------------------------------")


if __name__ == "__main__":
    main()
