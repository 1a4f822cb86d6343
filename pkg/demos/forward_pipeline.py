"""
From optical coefficients to pressure data
==========================================

Solve the transport problem for the low-scattering phantom, form the
absorbed energy and propagate it to the detector circle. Images are written
as PGM files into ``demo_output/forward``.
"""

from pathlib import Path

import numpy as np

from qpat import io
from qpat.acoustics import WaveOperator
from qpat.experiments import make_illumination, preset_low_scattering
from qpat.transport import assemble_rte_system, fluence, henyey_greenstein

out = Path("demo_output/forward")
out.mkdir(parents=True, exist_ok=True)

# a coarser grid than the presets so the script runs in seconds
sc = preset_low_scattering().with_overrides(n_subdiv=32, n_theta=32)
mesh, ang = sc.mesh(), sc.angular()
print(f"{mesh.n_nodes} nodes, {mesh.n_elements} triangles, {ang.n_theta} directions")

truth = sc.truth(mesh)
kernel = henyey_greenstein(sc.g, ang)
system = assemble_rte_system(mesh, ang, truth, kernel)

# light enters through the bottom edge and travels upwards
f = make_illumination("bottom", sc.intensity, ang, mesh)
phi = fluence(system.solve(f=f), ang)
print("fluence range", phi.min(), phi.max(), "GMRES", system.last_info)

H = (mesh.element_to_node @ truth.mu_a) * phi
io.write_nodal_field(out / "fluence", mesh, phi, "fluence")
io.write_nodal_field(out / "heating", mesh, H, "heating")

# the absorbing box at lower right casts a shadow above it
above = mesh.interpolate(phi, [[0.35, -0.1]])[0]
below = mesh.interpolate(phi, [[0.35, -0.6]])[0]
print(f"fluence above / below the box: {above / below:.3f}")

geom = sc.geometries()[0]
p = WaveOperator(mesh, geom).forward(H)
io.write_pgm(out / "sinogram.pgm", p.values)
print("pressure sinogram", p.values.shape, "max", np.abs(p.values).max())
