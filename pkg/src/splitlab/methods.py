"""Canonical method identifiers and their protocol family / topology / schedule."""

from __future__ import annotations

from .errors import ValidationError

CENTRALIZED = "centralized"
FL = "fl"

METHODS = (
    "centralized",
    "fl",
    "sl_ls_ac",
    "sl_ls_am",
    "sl_nls_ac",
    "sl_nls_am",
    "sflv2_ls",
    "sflv2_nls",
    "sflv3_ls",
    "sflv3_nls",
)


def check_method(method: str) -> str:
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    return method


def family(method: str) -> str:
    check_method(method)
    return method.split("_")[0]


def topology(method: str) -> str | None:
    """"ls" or "nls" for split-based methods, None otherwise."""
    check_method(method)
    if method in (CENTRALIZED, FL):
        return None
    return "nls" if "nls" in method.split("_") else "ls"


def schedule(method: str) -> str | None:
    """Batch schedule: "ac" or "am" for SL, "ac" for SplitFed, None otherwise."""
    check_method(method)
    if method in (CENTRALIZED, FL):
        return None
    return "am" if method.endswith("_am") else "ac"


def needs_split(method: str) -> bool:
    return topology(method) is not None
