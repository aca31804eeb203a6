"""Shared benchmark orbits for the variational test suites.  Building a
refined closed geodesic with its transfer system is the expensive setup
step, so the standard orbits are session-scoped."""

import pytest

import geodex.geodesic as gd
import geodex.manifold as mf

CYLINDER_TEXT = """
[manifold]
dim = 2
coords = x, t
periods = x: 1
signature = +-

[metric]
g.x.x = 1
g.t.t = -1

[killing]
Y.t = 1

[geodesic.circle]
x0 = 0, 0
v0 = 1, 0
"""

S2XR_TEXT = """
[manifold]
dim = 3
coords = theta, phi, t
periods = phi: 2*pi
domain = theta: 0.4 .. 2.74
signature = ++-

[metric]
g.theta.theta = 1
g.phi.phi = sin(theta)^2
g.t.t = -1

[killing]
Y.t = 1

[geodesic.equator]
x0 = pi/2, 0, 0
v0 = 0, 2*pi, 0
"""

TWISTED_TEXT = """
[manifold]
dim = 3
coords = theta, phi, t
periods = phi: 2*pi
domain = theta: 0.4 .. 2.74
signature = ++-

[metric]
g.theta.theta = 1
g.phi.phi = sin(theta)^2 - 0.2*sin(theta)^4
g.phi.t = -0.3*cos(theta)
g.t.t = -1

[killing]
Y.t = 1

[geodesic.equator]
x0 = pi/2, 0, 0
v0 = 0, 2*pi, 0
"""

SPHERE_TEXT = """
[manifold]
dim = 2
coords = theta, phi
periods = phi: 2*pi
domain = theta: 0.4 .. 2.74
signature = ++

[metric]
g.theta.theta = 1
g.phi.phi = sin(theta)^2

[geodesic.equator]
x0 = pi/2, 0
v0 = 0, 2*pi
"""


def build_transfer(text, name, guess):
    spec = mf.parse_manifold(text, name=name)
    x0, v0 = spec.geodesic_guesses[guess]
    return gd.jacobi_transfer(gd.refine_closed(spec, x0, v0))


@pytest.fixture(scope="session")
def cylinder_transfer():
    return build_transfer(CYLINDER_TEXT, "cylinder", "circle")


@pytest.fixture(scope="session")
def s2xr_transfer():
    return build_transfer(S2XR_TEXT, "s2xr", "equator")


@pytest.fixture(scope="session")
def twisted_transfer():
    return build_transfer(TWISTED_TEXT, "twisted", "equator")


@pytest.fixture(scope="session")
def sphere_transfer():
    return build_transfer(SPHERE_TEXT, "sphere", "equator")
