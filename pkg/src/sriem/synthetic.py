"""Synthetic click logs with a known first-order transition structure."""
from __future__ import annotations

import numpy as np

from .dataset import SESSION_SPACING, ClickEvent, PreprocessConfig, SessionCorpus, preprocess


def transition_sessions(n_sessions: int = 2000, n_items: int = 50, p_follow: float = 0.9,
                        min_len: int = 2, max_len: int = 10, noise: float = 0.0,
                        deviation: str = "repeat", fanout: int = 5,
                        seed: int = 0) -> tuple[list[list[str]], dict[str, str]]:
    """Sessions where next = f(current) with probability ``p_follow``.

    ``f`` is a random permutation of the items.  Otherwise the next item comes from

    * ``"repeat"`` (default): the current item again, as in a re-click;
    * ``"table"``: one of ``fanout`` fixed alternative successors of the current
      item, uniformly (a sparse first-order transition table);
    * ``"popular"``: a Zipf(1) popularity law over a random item ranking;
    * ``"uniform"``: any item.

    With ``noise`` > 0,
    extra uniform clicks are inserted so that they make up that fraction of all
    clicks.  Returns the sessions (as item-key strings) and the mapping ``f``.
    """
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_items)
    alternatives = np.array([rng.choice(np.delete(np.arange(n_items), perm[a]), fanout, replace=False)
                             for a in range(n_items)])
    if deviation == "popular":
        popularity = np.zeros(n_items)
        popularity[rng.permutation(n_items)] = 1.0 / np.arange(1, n_items + 1)
        popularity /= popularity.sum()
    elif deviation in ("uniform", "table", "repeat"):
        popularity = np.full(n_items, 1.0 / n_items)
    else:
        raise ValueError(f"deviation must be one of repeat, table, popular, uniform; got {deviation!r}")
    keys = [f"i{k}" for k in range(n_items)]
    f = {keys[a]: keys[perm[a]] for a in range(n_items)}
    sessions = []
    for _ in range(n_sessions):
        length = int(rng.integers(min_len, max_len + 1))
        cur = int(rng.integers(n_items))
        chain = [cur]
        for _ in range(length - 1):
            if rng.random() < p_follow:
                cur = int(perm[cur])
            elif deviation == "repeat":
                pass
            elif deviation == "table":
                cur = int(alternatives[cur, rng.integers(fanout)])
            else:
                cur = int(rng.choice(n_items, p=popularity))
            chain.append(cur)
        clicks = []
        for item in chain:
            clicks.append(keys[item])
            # geometric run of inserts: noise / (1 - noise) per real click on average
            while noise > 0 and rng.random() < noise:
                clicks.append(keys[int(rng.integers(n_items))])
        sessions.append(clicks)
    return sessions, f


def sessions_to_events(sessions: list[list[str]]) -> list[ClickEvent]:
    return [ClickEvent(f"s{i}", i * SESSION_SPACING + j, item)
            for i, s in enumerate(sessions) for j, item in enumerate(s)]


def transition_corpus(n_sessions: int = 2000, n_items: int = 50, p_follow: float = 0.9,
                      noise: float = 0.0, test_fraction: float = 0.2, seed: int = 0,
                      **kwargs) -> SessionCorpus:
    sessions, _ = transition_sessions(n_sessions, n_items, p_follow, noise=noise, seed=seed, **kwargs)
    return preprocess(sessions_to_events(sessions), PreprocessConfig(test_fraction=test_fraction))
