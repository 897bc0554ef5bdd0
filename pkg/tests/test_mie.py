import numpy as np
import pytest
from scipy.integrate import simpson

from emsurf.validation.mie import amplitude_functions, bistatic_rcs, mie_coefficients


def test_rayleigh_limit_pec_backscatter():
    # small conducting sphere: sigma_back = 9 pi a^2 (ka)^4
    k, a = 1.0, 0.01
    sigma = bistatic_rcs(k, a, np.pi)[0]
    assert sigma == pytest.approx(9 * np.pi * a ** 2 * (k * a) ** 4, rel=1e-3)


def test_rayleigh_limit_dielectric_backscatter():
    # small dielectric sphere: sigma_back = 4 pi a^2 (ka)^4 |(eps - 1) / (eps + 2)|^2
    k, a, eps = 1.0, 0.01, 4.0
    sigma = bistatic_rcs(k, a, np.pi, eps_r=eps)[0]
    ref = 4 * np.pi * a ** 2 * (k * a) ** 4 * abs((eps - 1) / (eps + 2)) ** 2
    assert sigma == pytest.approx(ref, rel=1e-3)


@pytest.mark.parametrize("x,eps", [(0.5, None), (1.0, None), (3.0, None), (1.0, 4.0), (2.0, 2.25)])
def test_optical_theorem_lossless(x, eps):
    # extinction from the forward amplitude equals the integrated scattered power
    a, b = mie_coefficients(x, eps)
    n = np.arange(1, len(a) + 1)
    q_sca = 2 / x ** 2 * np.sum((2 * n + 1) * (abs(a) ** 2 + abs(b) ** 2))
    s1, _ = amplitude_functions(x, 0.0, eps)
    q_ext = 4 / x ** 2 * s1[0].real
    assert q_ext == pytest.approx(q_sca, rel=1e-10)
    # the same power from integrating the bistatic pattern
    th = np.linspace(0, np.pi, 2001)
    s1, s2 = amplitude_functions(x, th, eps)
    dq = (abs(s1) ** 2 + abs(s2) ** 2) / 2 * np.sin(th)
    q_int = 2 * np.pi * simpson(dq, x=th) / (np.pi * x ** 2)
    assert q_int == pytest.approx(q_sca, rel=1e-5)


def test_forward_amplitudes_agree():
    s1, s2 = amplitude_functions(2.0, 0.0)
    assert s1[0] == pytest.approx(s2[0], rel=1e-12)
