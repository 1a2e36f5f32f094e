"""Independent brute-force oracles shared by the tests.

Everything here is written as literal loops over the defining formulas,
deliberately avoiding the vectorized code paths of the package.
"""

import numpy as np


def concordance_brute(risk, time, event):
    """O(n^2) pair enumeration of Harrell's C-index.

    Returns (c_index, n_concordant, n_discordant, n_tied_risk, n_comparable).
    """
    n = len(risk)
    conc = disc = tied = comp = 0
    for i in range(n):
        for j in range(n):
            if event[i] == 1 and time[i] < time[j]:
                comp += 1
                if risk[i] > risk[j]:
                    conc += 1
                elif risk[i] == risk[j]:
                    tied += 1
                else:
                    disc += 1
    c = (conc + 0.5 * tied) / comp if comp else float("nan")
    return c, conc, disc, tied, comp


def breslow_loglik_brute(beta, X, time, event):
    """Breslow partial log-likelihood straight from the definition."""
    beta = np.asarray(beta, dtype=float)
    eta = [float(np.dot(X[i], beta)) for i in range(len(time))]
    ll = 0.0
    for i in range(len(time)):
        if event[i] != 1:
            continue
        risk_set = [j for j in range(len(time)) if time[j] >= time[i]]
        denom = sum(np.exp(eta[j]) for j in risk_set)
        ll += eta[i] - np.log(denom)
    return float(ll)


def breslow_nll_scores_brute(scores, time, event):
    """Negative Breslow partial log-likelihood of per-row scores."""
    ll = 0.0
    for i in range(len(time)):
        if event[i] != 1:
            continue
        denom = sum(np.exp(scores[j]) for j in range(len(time))
                    if time[j] >= time[i])
        ll += scores[i] - np.log(denom)
    return float(-ll)


def random_survival_arrays(rng, n, p, censor_prob=0.3, tie_times=True):
    """Random (X, time, event) with at least one event; optional tied times."""
    X = rng.normal(size=(n, p))
    time = rng.exponential(10.0, size=n)
    if tie_times:
        time = np.round(time, 1)
    event = (rng.uniform(size=n) >= censor_prob).astype(int)
    if event.sum() == 0:
        event[int(rng.integers(n))] = 1
    return X, time, event
