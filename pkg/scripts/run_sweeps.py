"""
Runs every simulation preset through the command line and writes one
rejection-rate table per preset into results/.
Settings come from sweeps.yaml if present (replications, seed, jobs).
"""
import os
import subprocess
import sys

import yaml

PRESETS = ["partial-info", "ma4", "partial-info-sweep", "ma4-sweep"]


def run_sweeps():
    # --- LOAD CONFIGURATION ---
    replications = 1000
    seed = 0
    jobs = os.cpu_count() or 1
    out_dir = "results"

    if os.path.exists('sweeps.yaml'):
        try:
            with open('sweeps.yaml', 'r') as f:
                settings = yaml.safe_load(f) or {}
            replications = int(settings.get('replications', replications))
            seed = int(settings.get('seed', seed))
            jobs = int(settings.get('jobs', jobs))
            out_dir = settings.get('output_dir', out_dir)
            print(f"Configuration loaded. Replications: {replications}, seed: {seed}, jobs: {jobs}")
        except Exception as e:
            print(f"Warning: Could not read sweeps.yaml: {e}")

    os.makedirs(out_dir, exist_ok=True)
    main_py = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "main.py")
    failed = []

    for step, preset in enumerate(PRESETS, start=1):
        output = os.path.join(out_dir, f"{preset}.csv")
        cmd = [
            sys.executable, main_py, "simulate",
            f"--preset={preset}",
            f"--replications={replications}",
            f"--seed={seed}",
            f"--jobs={jobs}",
            f"--output={output}",
        ]

        print("\n---------------------------------------------------")
        print(f"STEP {step}: Running preset '{preset}'...")
        print("---------------------------------------------------")

        try:
            subprocess.check_call(cmd)
            print(f"SUCCESS: '{preset}' written to {output}.")
        except subprocess.CalledProcessError as e:
            print(f"ERROR: '{preset}' failed with exit code {e.returncode}")
            failed.append(preset)

    if failed:
        print(f"\nFinished with failures: {', '.join(failed)}")
        return 1
    print("\nAll presets finished.")
    return 0


if __name__ == "__main__":
    sys.exit(run_sweeps())
