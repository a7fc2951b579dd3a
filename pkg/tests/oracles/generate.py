"""Reference values for the unit tests, computed independently of metacal.

Uses mpmath (50 digits) for closed forms and scipy.stats.laplace for
distribution checks.  Run ``python tests/oracles/generate.py`` to reprint the
table frozen into the tests.
"""
import mpmath as mp
import numpy as np
from scipy import stats

mp.mp.dps = 50


def lap_cdf(x, mu, b):
    x, mu, b = mp.mpf(x), mp.mpf(mu), mp.mpf(b)
    return mp.mpf("0.5") * mp.e ** ((x - mu) / b) if x < mu else 1 - mp.mpf("0.5") * mp.e ** (-(x - mu) / b)


def mix_quantile(w, mu, b, q):
    f = lambda x: sum(wi * lap_cdf(x, m, s) for wi, m, s in zip(w, mu, b)) - q
    return mp.findroot(f, (min(mu) - 40 * max(b), max(mu) + 40 * max(b)), solver="anderson")


values = {
    "cdf_single_ln2": lap_cdf(mp.log(2), 0, 1),
    "cdf_mix_at_1": mp.mpf("0.5") * lap_cdf(1, -1, 1) + mp.mpf("0.5") * lap_cdf(1, 1, 1),
    "quantile_075": mp.log(2),
    "variance_mix": mp.mpf("0.5") * 2 + mp.mpf("0.5") * 3 - mp.mpf("0.25"),
    "calq_095": -mp.log(mp.mpf("0.1")),
    "iqr_identity": 2 * mp.log(2),
    "iqr_chain": -2 * mp.log(mp.mpf("0.1")),
    "cal_err_02_08": ((mp.mpf("0.2") - mp.mpf("0.5")) ** 2 + (mp.mpf("0.8") - 1) ** 2) / 2,
    "umap_k2": 2 * mp.log(2) * mp.mpf("0.2"),
    # reordering pair: A = Laplace(0, 1); B = bimodal +-0.8 with scales 0.05
    "reorder_A_uncal": 2 * mp.log(2),
    "reorder_B_uncal": mix_quantile([0.5, 0.5], [-0.8, 0.8], [0.05, 0.05], 0.75)
    - mix_quantile([0.5, 0.5], [-0.8, 0.8], [0.05, 0.05], 0.25),
    "reorder_A_cal": 2 * (-mp.log(mp.mpf("0.1"))),
    "reorder_B_cal": mix_quantile([0.5, 0.5], [-0.8, 0.8], [0.05, 0.05], 0.95)
    - mix_quantile([0.5, 0.5], [-0.8, 0.8], [0.05, 0.05], 0.05),
}

# cross-check the single-component closed forms against scipy
assert abs(stats.laplace.cdf(np.log(2)) - float(values["cdf_single_ln2"])) < 1e-15
assert abs(stats.laplace.ppf(0.95) - float(values["calq_095"])) < 1e-12
assert abs(2 * stats.laplace(scale=0.2).ppf(0.75) - float(values["umap_k2"])) < 1e-15

if __name__ == "__main__":
    for k, v in values.items():
        print(f"{k:20s} {mp.nstr(v, 17)}")
