"""
Checking the linearized heating operator
========================================

Compare the derivative with finite differences, test the transpose against
inner products and print the injectivity conditions at the linearization
point of each preset.
"""

import numpy as np

from qpat.checks import smooth_element_field
from qpat.experiments import PRESETS, make_illumination
from qpat.geometry import build_angular_grid, build_uniform_mesh
from qpat.heating import LinearizedHeatingOperator, heating
from qpat.transport import henyey_greenstein

mesh = build_uniform_mesh(24)
ang = build_angular_grid(32)
kernel = henyey_greenstein(0.8, ang)
f = make_illumination("bottom", 1.0, ang, mesh)
rng = np.random.default_rng(0)

for name, make in PRESETS.items():
    lin = make().linearization_point(mesh)
    op = LinearizedHeatingOperator(mesh, ang, lin, kernel, f=f)
    h = smooth_element_field(mesh, rng)
    Dh = op.apply(h)

    # first-order remainder: the error drops tenfold with eps
    for eps in (1e-2, 1e-3, 1e-4):
        H1 = heating(mesh, ang, lin.perturbed(h, eps=eps), kernel, f=f)
        err = np.linalg.norm((H1 - op.heating) / eps - Dh) / np.linalg.norm(Dh)
        print(f"{name:16s} eps={eps:.0e}  relative FD error {err:.2e}")

    z = rng.standard_normal(mesh.n_nodes)
    gap = abs(Dh @ z - h @ op.adjoint(z)) / (np.linalg.norm(Dh) * np.linalg.norm(z))
    print(f"{name:16s} transpose mismatch {gap:.1e}")

    for line in op.injectivity_report().lines():
        print("   ", line)
