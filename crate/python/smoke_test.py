#!/usr/bin/env python3
"""Smoke test for the emff_py extension module.

Builds the cdylib with cargo, imports it, and exercises the main entry
points against hand-computed values. Run from the repository root:

    python3 python/smoke_test.py
"""

import json
import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def build_module() -> Path:
    subprocess.run(
        ["cargo", "build", "--release", "-p", "emff-py"],
        cwd=REPO,
        check=True,
    )
    built = REPO / "target" / "release" / "libemff_py.so"
    if not built.exists():  # e.g. macOS
        built = REPO / "target" / "release" / "libemff_py.dylib"
    stage = Path(tempfile.mkdtemp(prefix="emff_py_"))
    shutil.copy(built, stage / "emff_py.so")
    return stage


def approx(a, b, rel=1e-9, absolute=0.0):
    scale = max(abs(a), abs(b), absolute / rel if rel else 0.0)
    assert abs(a - b) <= rel * scale + absolute, f"{a} != {b}"


def main() -> None:
    sys.path.insert(0, str(build_module()))
    import emff_py as em

    # far-field dipole model against hand values
    b = em.dipole_field([0.0, 0.0, 100.0], [0.0, 0.0, 2.0])
    approx(b[2], 2.5e-6, rel=1e-12)
    f = em.dipole_force([0.0, 0.0, 100.0], [0.0, 0.0, 100.0], [0.0, 0.0, 2.0])
    approx(f[2], -3.75e-4, rel=1e-12)
    tau = em.dipole_torque([0.0, 0.0, 100.0], [100.0, 0.0, 0.0], [0.0, 0.0, 2.0])
    approx(tau[1], -2.5e-4, rel=1e-12)

    # action-reaction
    f_ab = em.dipole_force([10.0, -5.0, 20.0], [3.0, 8.0, -2.0], [4.0, 1.0, -3.0])
    f_ba = em.dipole_force([3.0, 8.0, -2.0], [10.0, -5.0, 20.0], [-4.0, -1.0, 3.0])
    for x, y in zip(f_ab, f_ba):
        approx(x, -y, rel=1e-12)

    # coil dipole and attitude helpers
    mu = em.coil_dipole(290, 0.5, math.pi * 0.03**2, [0.0, 0.0, 1.0])
    approx(mu[2], 290 * 0.5 * math.pi * 0.03**2, rel=1e-12)
    assert em.mrp_shadow_switch([2.0, 0.0, 0.0]) == [-0.5, 0.0, 0.0]
    dcm = em.mrp_to_dcm([0.0, 0.0, 0.0])
    assert dcm[0][0] == dcm[1][1] == dcm[2][2] == 1.0

    # orbit sanity: 700 km circular period
    period = em.orbital_period(700e3)
    assert abs(period - 5926.0) < 1.0, period

    # geomagnetic field magnitude at orbit radius, on the dipole axis
    tilt = math.radians(11.0)
    r = 7.078e6
    b_e = em.geomagnetic_field([r * math.sin(tilt), 0.0, r * math.cos(tilt)])
    approx(math.sqrt(sum(x * x for x in b_e)), 4.57e-5, rel=1e-2)

    # two-satellite allocation reproduces the attractive coaxial pair
    d, force = 10.0, 2e-3
    mu_sin, mu_cos, residual, objective, restarts = em.solve_allocation(
        positions=[[0.0, 0.0, 0.0], [0.0, 0.0, d]],
        target_forces=[[0.0, 0.0, -force]],
        target_torques=[[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
        d_min=2.0,
        omega_f=4.0 * math.pi,
    )
    assert residual < 1e-8
    bound = 2.0 * (4.0 * math.pi * d**4 * force / (3.0 * em.MU0))
    assert objective <= bound * (1.0 + 1e-6), (objective, bound)
    forces, torques = em.averaged_wrench(mu_sin, mu_cos, [[0, 0, 0], [0, 0, d]], d_min=2.0)
    approx(forces[1][2], -force, rel=1e-6)

    # preset plumbing and a short closed-loop run
    assert em.preset_names() == ["maintenance_5sat", "reconfig_5sat_3rw", "unloading_5sat_mtq"]
    assert "maintenance_5sat" in em.preset_toml("maintenance_5sat")
    summary = json.loads(em.run_preset("maintenance_5sat", duration_s=2.0))
    assert summary["steps"] == 40
    assert summary["alloc_max_residual"] < 1e-6
    assert summary["pos_rms_m"] < 1e-3

    print("emff_py smoke test: ok")


if __name__ == "__main__":
    main()
