"""Regenerate bound_oracle.json: closed-form bounds at 50 significant digits.

    python3 bound_oracle.py > bound_oracle.json
"""
import json
import random

from mpmath import mp, mpf, sqrt, log, e

mp.dps = 50

C0 = sqrt(mpf(32) * log(4 * e) / 3)


def transductive(x):
    s = mpf(x["s_p"] * x["s_a"])
    t = mpf(x["t_p"] * x["t_a"])
    eta = mpf(x["eta"])
    g, lip, w0 = mpf(x["gamma_loss"]), mpf(x["lipschitz"]), mpf(x["w0"])
    return s, t, eta, g * lip * w0


def thm1(x):
    s, t, _, glw = transductive(x)
    return {"complexity": glw * (s + t) / (s * t)}


def thm2(x):
    s, t, eta, glw = transductive(x)
    d = mpf(x["delta"])
    return {
        "error_s": mpf(x["error_s"]),
        "term1": glw * (1 + eta) / (eta * s),
        "term2": C0 * (1 + eta) / sqrt(eta * s),
        "term3": sqrt((1 + eta) * log(1 / d) / (2 * t)),
    }


def cor2(x, cla):
    sp = mpf(x["s_p"])
    eta, d = mpf(x["eta"]), mpf(x["delta"])
    glw = mpf(x["gamma_loss"]) * mpf(x["lipschitz"]) * mpf(x["w0"])
    factor = mpf(x["s_a"]) if cla else mpf(1)
    root = sqrt(eta * sp)
    return {
        "error_s": mpf(x["error_s"]),
        "term1": glw * factor * (1 + eta) / (eta * sp),
        "term2": C0 * (1 + eta) / root,
        "term3": sqrt(mpf(1) / 2 * (1 + eta) * log(1 / d)) / root,
    }


def thm3(x):
    s = mpf(x["s_p"] * x["s_a"])
    l, gf, sig = mpf(x["layers"]), mpf(x["frob_product"]), mpf(x["sum_sq_norms"])
    return {"complexity": sqrt(2 * l * log(2) * gf * sig + 2 * gf**2 * sig ** mpf(1.5)) / s}


def inductive(x, gamma_s):
    s = mpf(x["s_p"] * x["s_a"])
    l, gf = mpf(x["layers"]), mpf(x["frob_product"])
    gm, d = mpf(x["gamma_margin"]), mpf(x["delta"])
    c1 = sqrt(log(log(4 / gm) / log(2))) + sqrt(log(1 / d))
    inner = log(2) * l * gf * gamma_s + gf**2 * gamma_s ** mpf(1.5) * sqrt(s)
    return {
        "error_s": mpf(x["error_s"]),
        "rademacher": 4 * sqrt(2) / (sqrt(s) * gm) * sqrt(inner),
        "confidence": c1 / sqrt(s),
    }


def thm4(x):
    return inductive(x, mpf(x["max_sq_norm"]))


def cor5(x):
    return inductive(x, (mpf(x["chi2"]) + 1) * mpf(x["max_sq_norm"]))


def draw(rng):
    s_p = rng.randint(20, 5000)
    t_p = rng.randint(1, s_p - 1)
    s_a = rng.randint(1, 20)
    return {
        "s_p": s_p,
        "s_a": s_a,
        "t_p": t_p,
        "t_a": s_a,
        "eta": t_p / s_p,
        "delta": rng.uniform(0.001, 0.5),
        "gamma_loss": rng.uniform(0.1, 6.0),
        "gamma_margin": rng.uniform(0.01, 1.9),
        "lipschitz": 10 ** rng.uniform(-1, 2),
        "w0": 10 ** rng.uniform(-1, 1.5),
        "frob_product": 10 ** rng.uniform(0, 4),
        "layers": rng.randint(1, 6),
        "sum_sq_norms": 10 ** rng.uniform(0, 5),
        "max_sq_norm": 10 ** rng.uniform(-0.5, 1.7),
        "chi2": rng.uniform(0, 10),
        "error_s": rng.uniform(0, 1),
    }


def main():
    rng = random.Random(20240611)
    cases = []
    for _ in range(100):
        x = draw(rng)
        reports = {
            "thm1": thm1(x),
            "thm2": thm2(x),
            "cor2_reg": cor2(x, False),
            "cor2_cla": cor2(x, True),
            "thm3": thm3(x),
            "thm4": thm4(x),
            "cor5": cor5(x),
        }
        expected = {
            k: {"value": mp.nstr(sum(t.values()), 30), "terms": {n: mp.nstr(v, 30) for n, v in t.items()}}
            for k, t in reports.items()
        }
        cases.append({"inputs": x, "expected": expected})
    print(json.dumps({"c0": mp.nstr(C0, 30), "cases": cases}, indent=1))


if __name__ == "__main__":
    main()
