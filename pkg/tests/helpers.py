"""Shared test helpers: the brute-force counting oracle and corpus builders.

The oracle enumerates position pairs and triples directly from the
reference tokenizer and term extractor, so it shares no windowing or
aggregation code with the production counter.
"""

from __future__ import annotations

import random

from freqgap.counting import NN_PAIR_MAX, CounterConfig, extract_term, tokenize
from freqgap.terms import UNIT_BASE


def oracle_count(documents, config: CounterConfig) -> dict[tuple[int, ...], int]:
    """Exact counts by direct enumeration of in-window position tuples."""
    maxdist = config.max_distance
    pair_targets = triple_targets = None
    if config.target_sets is not None:
        pair_targets = {t for t in config.target_sets if len(t) == 2}
        triple_targets = {t for t in config.target_sets if len(t) == 3}
    counts: dict[tuple[int, ...], int] = {}

    def bump(key: tuple[int, ...]) -> None:
        counts[key] = counts.get(key, 0) + 1

    for text in documents:
        terms = []
        for token, pos in tokenize(text):
            code = extract_term(token, config)
            if code is not None:
                terms.append((pos, code))
        for a, (pa, ca) in enumerate(terms):
            bump((ca,))
            for b in range(a + 1, len(terms)):
                pb, cb = terms[b]
                if pb - pa > maxdist:
                    break
                pair = tuple(sorted((ca, cb)))
                if pair_targets is None:
                    a_unit = ca >= UNIT_BASE
                    b_unit = cb >= UNIT_BASE
                    if a_unit and b_unit:
                        pass
                    elif a_unit or b_unit:
                        bump(pair)
                    elif ca < NN_PAIR_MAX and cb < NN_PAIR_MAX:
                        bump(pair)
                else:
                    if pair in pair_targets:
                        bump(pair)
                    if triple_targets:
                        for c in range(b + 1, len(terms)):
                            pc, cc = terms[c]
                            if pc - pa > maxdist:
                                break
                            triple = tuple(sorted((ca, cb, cc)))
                            if triple in triple_targets:
                                bump(triple)
    return counts


UNIT_SURFACES = [
    "second", "seconds", "minute", "minutes", "hour", "hours", "Hours",
    "day", "days", "week", "weeks", "month", "months", "year", "years",
    "YEARS", "decade", "decades", "hOuRs",
]

FILLER = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf",
    "hotel", "india", "juliet", "kilo", "lima", "mike", "november",
    "said", "today", "monday", "weekend", "yearly", "hourly", "x86",
]

ODDBALLS = ["1,000", "23.45", "a23", "...", "$5", "12345678", "0007", "(23)", "18?"]


def random_token(rng: random.Random) -> str:
    r = rng.random()
    if r < 0.20:
        return str(rng.randrange(0, 120))
    if r < 0.28:
        return str(rng.randrange(0, 2_000_000))
    if r < 0.38:
        return rng.choice(UNIT_SURFACES)
    if r < 0.44:
        token = str(rng.randrange(0, 100))
        return rng.choice(["(", '"', "["]) + token + rng.choice([")", ",", ".", "?", "]"])
    if r < 0.50:
        return rng.choice(ODDBALLS)
    return rng.choice(FILLER)


def random_corpus(rng: random.Random, n_docs: int, max_tokens: int = 60) -> list[str]:
    docs = []
    for _ in range(n_docs):
        n = rng.randrange(0, max_tokens)
        sep = "\n" if rng.random() < 0.1 else " "
        docs.append(sep.join(random_token(rng) for _ in range(n)))
    return docs
