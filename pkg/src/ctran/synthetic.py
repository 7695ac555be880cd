"""Small template-generated joint NLU corpora for smoke and overfit runs."""
from __future__ import annotations

import random

from .data import Example

CITIES = [["boston"], ["denver"], ["dallas"], ["new", "york"], ["san", "francisco"],
          ["atlanta"], ["los", "angeles"], ["seattle"]]
DATES = ["monday", "tuesday", "tomorrow", "today", "friday", "sunday"]
ARTISTS = ["adele", "queen", "prince", "madonna", "coldplay"]


def _city(rng, tokens, slots):
    city = rng.choice(CITIES)
    tokens.extend(city)
    slots.extend(["B-city"] + ["I-city"] * (len(city) - 1))


def _flight(rng):
    t, s = ["show", "flights", "from"], ["O", "O", "O"]
    _city(rng, t, s)
    t.append("to"); s.append("O")
    _city(rng, t, s)
    if rng.random() < 0.6:
        t += ["on", rng.choice(DATES)]; s += ["O", "B-date"]
    return t, s, "flight"


def _weather(rng):
    t, s = ["what", "is", "the", "weather", "in"], ["O"] * 5
    _city(rng, t, s)
    if rng.random() < 0.5:
        t.append(rng.choice(DATES)); s.append("B-date")
    return t, s, "weather"


def _music(rng):
    t = [rng.choice(["play", "put", "queue"]), "songs", "by", rng.choice(ARTISTS)]
    return t, ["O", "O", "O", "B-artist"], "music"


def synthetic_corpus(n: int, seed: int = 0, prefix: str = "syn") -> list[Example]:
    """``n`` examples over 3 intents and the 5 tags O, B-city, I-city, B-date, B-artist."""
    rng = random.Random(seed)
    makers = (_flight, _weather, _music)
    out = []
    for i in range(n):
        tokens, slots, intent = makers[i % 3](rng)
        out.append(Example(tokens, slots, intent, id=f"{prefix}:{i}"))
    return out
