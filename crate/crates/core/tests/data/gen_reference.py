"""Regenerates the high-precision reference tables used by the test suite.

Run with: python3 gen_reference.py  (requires mpmath)
"""
import mpmath as mp

mp.mp.dps = 50


def ln_phi(x):
    return mp.log(mp.ncdf(x))


with open("log_norm_cdf_ref.txt", "w") as f:
    f.write("# x ln_phi(x), x on a 1e-3 grid over [-8, 8], 50-digit mpmath\n")
    for k in range(-8000, 8001):
        x = mp.mpf(k) / 1000
        f.write("%s %s\n" % (mp.nstr(x, 6), mp.nstr(ln_phi(x), 20)))

with open("misc_ref.txt", "w") as f:
    f.write("ln_phi(-40) %s\n" % mp.nstr(ln_phi(-40), 20))
    f.write("ln_phi(1) %s\n" % mp.nstr(ln_phi(1), 20))
    f.write("phi_inv(0.75) %s\n" % mp.nstr(mp.sqrt(2) * mp.erfinv(mp.mpf(1) / 2), 20))
    for z in (0, 3):
        z = mp.mpf(z)
        masses = [
            1 - mp.ncdf(2 - z),
            mp.ncdf(2 - z) - mp.ncdf(1 - z),
            mp.ncdf(1 - z) - mp.ncdf(-1 - z),
            mp.ncdf(-1 - z) - mp.ncdf(-2 - z),
            mp.ncdf(-2 - z),
        ]
        f.write("masses(z=%s) %s\n" % (mp.nstr(z, 3), " ".join(mp.nstr(m, 20) for m in masses)))
