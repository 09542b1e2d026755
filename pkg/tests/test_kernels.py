"""Compiled kernels against the numpy reference path."""

import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from osmilestone import kernels
from osmilestone import _kernels_np as ref

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "benchmarks"))
from bench_kernels import make_inputs  # noqa: E402

nb = kernels.numba_backend()
needs_numba = pytest.mark.skipif(nb is None, reason="numba not installed")


@needs_numba
@pytest.mark.parametrize("name", ["weibull_logterms", "tl_chaz_factor", "clayton_logterms",
                                  "tl_ppd_solve", "tl_integrated_os"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_backends_agree(name, seed):
    args = make_inputs(257, seed)[name]
    a = getattr(ref, name)(*args)
    b = getattr(nb, name)(*args)
    if isinstance(a, tuple):
        for x, y in zip(a, b):
            np.testing.assert_allclose(y, x, rtol=1e-10, atol=1e-12)
    else:
        np.testing.assert_allclose(b, a, rtol=1e-10, atol=1e-12)


@needs_numba
def test_backends_agree_on_edge_inputs():
    # zero times, no events, extreme eta: the branches the random inputs rarely hit
    y = np.array([0.0, 1e-12, 5.0, 5.0])
    d = np.array([0.0, 1.0, 1.0, 0.0])
    for alpha in (0.4, 1.0, 3.0):
        np.testing.assert_allclose(nb.weibull_logterms(alpha, np.full(4, -2.0), y, d),
                                   ref.weibull_logterms(alpha, np.full(4, -2.0), y, d), rtol=1e-12)
    ha = np.array([0.0, 1e-9, 3.0, 40.0])
    hb = np.array([1e-9, 0.0, 2.0, 30.0])
    lh = np.log(np.maximum(ha, 1e-300))
    for eta in (1e-4, 0.5, 25.0):
        for da, db in ((1, 1), (1, 0), (0, 1), (0, 0)):
            a = ref.clayton_logterms(ha, hb, lh, lh, np.full(4, float(da)), np.full(4, float(db)), eta)
            b = nb.clayton_logterms(ha, hb, lh, lh, np.full(4, float(da)), np.full(4, float(db)), eta)
            np.testing.assert_allclose(b, a, rtol=1e-10)
    x = np.array([-50.0, -1e-8, 0.0, 1e-8, 30.0])
    nodes, weights = make_inputs(1)["tl_chaz_factor"][2:]
    np.testing.assert_allclose(nb.tl_chaz_factor(0.7, x, nodes, weights),
                               ref.tl_chaz_factor(0.7, x, nodes, weights), rtol=1e-12)


def test_disable_flag_selects_numpy():
    code = "from osmilestone import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, OSM_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    env["OSM_DISABLE_NUMBA"] = "0"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == ("numba" if nb is not None else "numpy")


def test_tl_chaz_factor_is_one_without_slope():
    # a flat trajectory leaves the plain Weibull cumulative hazard
    nodes, weights = make_inputs(1)["tl_chaz_factor"][2:]
    for alpha in (0.5, 1.0, 2.2):
        assert kernels.tl_chaz_factor(alpha, np.zeros(1), nodes, weights)[0] == pytest.approx(1.0, rel=1e-12)
