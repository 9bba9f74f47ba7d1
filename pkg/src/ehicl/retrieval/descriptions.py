"""Sentence templates shared by the synthetic corpus and the mock client."""

from __future__ import annotations

from .involvement import InvolvementClass

__all__ = ["description_sentence", "reasoning_sentence", "NO_HAND_SENTENCE"]

NO_HAND_SENTENCE = "No hand involvement."

_SUBJECT = {
    InvolvementClass.LEFT_ONLY: "Left hand",
    InvolvementClass.RIGHT_ONLY: "Right hand",
    InvolvementClass.BOTH: "Both hands",
}


def description_sentence(involvement, verb: str, noun: str) -> str:
    involvement = InvolvementClass(involvement)
    if involvement is InvolvementClass.NONE:
        return NO_HAND_SENTENCE
    return f"{_SUBJECT[involvement]} {verb} a {noun}."


def reasoning_sentence(involvement, verb: str, noun: str) -> str:
    involvement = InvolvementClass(involvement)
    if involvement is InvolvementClass.NONE:
        return "No hands are visible; nothing occludes the scene."
    return (
        f"{_SUBJECT[involvement]} {verb} a {noun} under partial occlusion; "
        "infer the hidden finger placement from the contact."
    )
