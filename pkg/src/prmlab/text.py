"""Step-text conventions shared by the simulator and the feature extractor.

Simulated step lines carry two channels: a noisy observable token (what a
scorer is allowed to learn from) and a hidden state token prefixed with ``@``
that encodes chain validity exactly. :func:`tokenize` drops ``@``-prefixed
words, so hashed text features never see the hidden channel; the tabular
oracle scorer decodes it directly.
"""

from __future__ import annotations

import re

from .core import ANSWER_MARKER

HIDDEN_PREFIX = "@"
HIDDEN_VALID = "@v1"
HIDDEN_INVALID = "@v0"
OBS_OK = "check-ok"
OBS_BAD = "check-bad"

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def reasoning_step_text(index: int, valid: bool, obs_ok: bool) -> str:
    # index is deliberately not echoed into the text: position is the feature
    # extractor's job, and lexical step numbering would leak prefix length
    # through hashed history counts.
    obs = OBS_OK if obs_ok else OBS_BAD
    flag = HIDDEN_VALID if valid else HIDDEN_INVALID
    return f"step: {obs} {flag}"


def answer_step_text(answer) -> str:
    return f"{ANSWER_MARKER} {answer}"


def decode_hidden_flag(text: str) -> bool | None:
    """Hidden validity flag of a step line, or None if the line carries none."""
    for word in text.split():
        if word == HIDDEN_VALID:
            return True
        if word == HIDDEN_INVALID:
            return False
    return None


def decode_observation(text: str) -> int:
    """Observable channel as +1 (looks fine), -1 (looks broken), 0 (absent)."""
    if OBS_OK in text:
        return 1
    if OBS_BAD in text:
        return -1
    return 0


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric tokens, with hidden-channel words removed."""
    tokens: list[str] = []
    for word in text.split():
        if word.startswith(HIDDEN_PREFIX):
            continue
        tokens.extend(_TOKEN_RE.findall(word.lower()))
    return tokens
