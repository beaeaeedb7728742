import glob
import json
import os
import sys
import tempfile

from app.core.pipeline import run

# Config
CONFIG_DIR = "configs"
QUICK_CONFIGS = ["selftest.ini", "witness.ini", "geometry.ini"]


def run_once(config_path, out_dir, threads):
    state = run(config_path=config_path, overrides={"experiment.output": out_dir}, threads=threads)
    status = "ok" if not state.get("error_kind") else f"failed ({state['error_kind']})"
    print(f"  {os.path.basename(config_path)} [{threads} thread(s)]: {status}")
    for error in state.get("errors", []):
        print(f"    {error}")
    manifest_path = os.path.join(out_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        return None
    with open(manifest_path, "r", encoding="utf-8") as f:
        return json.load(f)["digests"]


def verify(config_path):
    """Run a config twice (1 and 4 threads) and compare every output digest."""
    with tempfile.TemporaryDirectory() as tmp:
        first = run_once(config_path, os.path.join(tmp, "a"), threads=1)
        second = run_once(config_path, os.path.join(tmp, "b"), threads=4)
    if first is None or first != second:
        print(f"  ✗ {os.path.basename(config_path)}: outputs differ between runs")
        return False
    print(f"  ✓ {os.path.basename(config_path)}: {len(first)} files byte-identical")
    return True


def run_test(configs):
    print(f"Verifying {len(configs)} config(s)...")
    results = [verify(path) for path in configs]
    print(f"\n{sum(results)}/{len(results)} configs reproducible")
    return all(results)


if __name__ == "__main__":
    # Pass --all to include the long Monte Carlo sweeps
    if "--all" in sys.argv[1:]:
        configs = sorted(glob.glob(os.path.join(CONFIG_DIR, "*.ini")))
    else:
        configs = [os.path.join(CONFIG_DIR, name) for name in QUICK_CONFIGS]
    sys.exit(0 if run_test(configs) else 1)
