"""Harrell's concordance index over (risk, time, event) triples."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConcordanceResult:
    """Pair counts and the resulting C-index.

    A pair (i, j) is comparable when time_i < time_j and subject i had the
    event; concordant when the earlier subject carries the higher risk;
    tied-risk pairs are credited one half.
    """

    c_index: float
    n_concordant: int
    n_discordant: int
    n_tied_risk: int
    n_comparable: int


def concordance_index(risk, time, event) -> ConcordanceResult:
    """Compute Harrell's C-index for right-censored data.

    Parameters
    ----------
    risk : array-like, shape (n,)
        Predicted risk scores; higher means the event is expected sooner.
    time : array-like, shape (n,)
        Observed times (event or censoring).
    event : array-like, shape (n,)
        Event indicators in {0, 1}; 1 means the event was observed.

    Raises
    ------
    ValueError
        If lengths disagree or there is no comparable pair (all censored,
        or a single row).
    """
    risk = np.asarray(risk, dtype=float)
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    if risk.ndim != 1 or risk.shape != time.shape or risk.shape != event.shape:
        raise ValueError("risk, time and event must be 1-D arrays of equal length")

    # comparable: earlier subject had the event and strictly precedes the other.
    comparable = (time[:, None] < time[None, :]) & (event[:, None] == 1)
    n_comparable = int(comparable.sum())
    if n_comparable == 0:
        raise ValueError("no comparable pairs")

    diff = risk[:, None] - risk[None, :]
    n_concordant = int((comparable & (diff > 0)).sum())
    n_tied = int((comparable & (diff == 0)).sum())
    n_discordant = n_comparable - n_concordant - n_tied
    c = (n_concordant + 0.5 * n_tied) / n_comparable
    return ConcordanceResult(
        c_index=float(c),
        n_concordant=n_concordant,
        n_discordant=n_discordant,
        n_tied_risk=n_tied,
        n_comparable=n_comparable,
    )
