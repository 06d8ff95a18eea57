"""Independent re-derivation of the convergence constants for the default
single-integrator run, in 50-digit arithmetic.

Inputs: reward bounds, score bound and score Lipschitz constant of the
default 20x20 RBF policy, gamma = 0.98, T = 50, d = 800, alpha = 1,
h = 0.5/L0, eta_A = eta_A_hat = eta_Delta_hat = 1, eta_B = 2 eta_A,
eps_star = 1e-3, zero baseline.

    python3 docs/convergence_constants.py > docs/convergence_constants.csv
"""

from mpmath import mp, mpf, sqrt, ceil

mp.dps = 50

B = [mpf(10) + mpf("1e-6"), mpf(1)]
B_TILDE = mpf(100)
L_POLICY = mpf("130.71027952677645")
GAMMA = mpf("0.98")
T = 50
D = 800
ALPHA = mpf(1)
ETA_A = ETA_A_HAT = ETA_DELTA_HAT = mpf(1)
ETA_B = 2 * ETA_A
EPS_STAR = mpf("1e-3")
B_HAT = mpf(0)


def sigma_tilde(bq):
    return bq * sum(GAMMA**t for t in range(T + 1))


def sigma_bar(bq):
    return B_TILDE * sum(
        GAMMA**t * sum(bq * GAMMA ** (tp - t) + B_HAT for tp in range(t, T + 1)) for t in range(T + 1)
    )


def lipschitz(bq):
    # Direct double sum over both time indices of the Hessian bound.
    return sum(
        GAMMA ** (t + s) * (bq * L_POLICY + bq * B_TILDE**2 * (t + s + 1))
        for t in range(T + 1)
        for s in range(T + 1)
    )


st = [sigma_tilde(b) for b in B]
sb = [sigma_bar(b) for b in B]
L0 = lipschitz(B[0])
h = mpf("0.5") / L0

M0, M1 = sqrt(D) * sb[0], sqrt(D) * sb[1]
M_A = M1**2 + 2 * ALPHA * st[1]
M_B = 2 * M_A
M_C = 2 * M1 * M0 + 2 * ALPHA * M1
M_DELTA = 4 * (M1 + M0) ** 2 * M_A
ETA_B_HAT = 2 * ETA_A_HAT
M_U = (M_B + sqrt(M_DELTA)) / (2 * ETA_A)
K_A, K_B, K_C = 2 * M1, 4 * M1, 2 * M1 + 4 * M0
K_DELTA = (K_B + 2 * M_B * K_B + 4 * K_A * M_C + 4 * M_A * K_C) / ETA_DELTA_HAT
K_U = max(
    K_A * (M_B + sqrt(M_DELTA)) / (2 * ETA_A * ETA_A_HAT) + (K_DELTA + K_B) / (2 * ETA_A),
    2 * K_C / ETA_B,
    2 * K_C / ETA_B_HAT,
)
M_P = h * (M0 + M_U * M1)
M_P_BAR = 2 * M_P / (1 / h - L0 / 2)
K_P = 1 + K_U * sb[1] + M_U + K_U

# Largest eps with sqrt(M_P_BAR eps) + h K_P eps = EPS_STAR: quadratic in sqrt(eps).
a, b = h * K_P, sqrt(M_P_BAR)
s = (-b + sqrt(b * b + 4 * a * EPS_STAR)) / (2 * a)
EPS = s * s
K_MIN = ceil(2 * st[0] / (M_P * EPS))
N_LOWER = max(D * sb[1] ** 2, D * sb[0] ** 2, st[1] ** 2) / EPS

rows = [
    ("B0", B[0]), ("B1", B[1]), ("B_tilde", B_TILDE), ("L_policy", L_POLICY), ("gamma", GAMMA), ("T", T),
    ("d", D), ("alpha", ALPHA), ("eta_A", ETA_A), ("eta_A_hat", ETA_A_HAT), ("eta_Delta_hat", ETA_DELTA_HAT),
    ("eps_star", EPS_STAR),
    ("sigma_tilde0", st[0]), ("sigma_tilde1", st[1]), ("sigma_bar0", sb[0]), ("sigma_bar1", sb[1]),
    ("L0", L0), ("h", h), ("M0", M0), ("M1", M1), ("M_A", M_A), ("M_B", M_B), ("M_C", M_C),
    ("M_Delta", M_DELTA), ("eta_B", ETA_B), ("eta_B_hat", ETA_B_HAT), ("M_u", M_U), ("K_A", K_A),
    ("K_B", K_B), ("K_C", K_C), ("K_Delta", K_DELTA), ("K_u", K_U), ("M_p", M_P), ("M_p_bar", M_P_BAR),
    ("K_p", K_P), ("epsilon", EPS), ("min_iterations", K_MIN), ("episode_lower_bound", N_LOWER),
]
print("name,value")
for name, v in rows:
    print(f"{name},{mp.nstr(mpf(v), 25, min_fixed=-1, max_fixed=-1)}")
