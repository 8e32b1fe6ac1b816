"""Prompt templates driving the reasoning backends.

Bodies are fixed wording (pinned by golden files in the test suite) with
three placeholders: ``<prompt>`` for the full complex instruction,
``<simple prompts>`` for one decomposed sub-prompt, and ``<img>``, which
is never substituted here; it stays in the text as the sentinel the
backend adapter replaces with the actual image attachment.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .errors import TemplateError

IMG_SENTINEL = "<img>"


class TemplateName(Enum):
    DECOMPOSITION = "DECOMPOSITION"
    LOCALIZATION = "LOCALIZATION"
    DESCRIPTION = "DESCRIPTION"
    ICL = "ICL"


@dataclass(frozen=True)
class PromptTemplate:
    name: TemplateName
    body: str


_DECOMPOSITION_BODY = (
    "Your task involves deconstructing complex instructions into a sequence of simpler, "
    "actionable steps, aiding in better understanding and execution of the task at hand. "
    "Each of these simple steps should involve only a single operation: either adding, "
    "deleting, or altering an object. Currently, you are provided with complex "
    "instructions, denoted as <prompt>. Please parse these instructions into a series of "
    "simpler steps."
)

_LOCALIZATION_BODY = (
    "As an expert in image analysis, your task is to identify the area in the image that "
    "corresponds to a given prompt. Your role is to analyze the prompts and determine the "
    "specific regions in the image that needs editing. Once you've identified the area, "
    "you should clearly indicate them within the image. The prompts provided are as "
    "follows: <simple prompts>. \n <img>"
)

_DESCRIPTION_BODY = (
    "Once the area to be edited has been identified, your task is to provide a detailed "
    "area description and a re-prompt that specify the desired changes. The detailed area "
    "description should encompass attributes such as the area's relative position within "
    "the image, its color, shape, and other notable features. The re-prompt should "
    "clearly articulate the intended appearance of the area post-editing. By furnishing "
    "this detailed information, you facilitate precise identification of the area in "
    "question and clearly define the expected transformation. The results should be in "
    "format like this:\n"
    "- Reasoning and locating the regions:\n To add a suitcase in place of the laptop, "
    "we need to identify the laptop's location in the source image. The target area to "
    "be edited is where the laptop is situated.\n- Area description:\n The target area "
    "in the image is where the laptop is placed, which is on the left side of the desk. "
    "The laptop has a black-colored body with white-colored keys on the keyboard. It is "
    "positioned near a computer mouse and a phone, with its screen visible and "
    "displaying a webpage with red and black elements. The laptop's screen is slightly "
    "tilted towards the viewer.\n -The inpainting prompt is a suitcase on the leftside "
    "of the image.\n <img>"
)

_ICL_BODY = (
    "As an expert in image analysis, your task is to identify the area in the image that "
    "corresponds to a given prompt. Your role is to analyze the prompts and determine the "
    "specific regions in the image that needs editing. Once you've identified the area, "
    "you should clearly indicate them within the image. The prompts provided are as "
    "follows: <prompt>. \n"
    "Once the area to be edited has been identified, your task is to provide a detailed "
    "area description and a re-prompt that specify the desired changes. The detailed area "
    "description should encompass attributes such as the area's relative position within "
    "the image, its color, shape, and other notable features. The re-prompt should "
    "clearly articulate the intended appearance of the area post-editing. By furnishing "
    "this detailed information, you facilitate precise identification of the area in "
    "question and clearly define the expected transformation. \n"
    "The results should be in format like this: - Reasoning and locating the regions:\n "
    "To add a suitcase in place of the laptop, we need to identify the laptop's location "
    "in the source image. The target area to be edited is where the laptop is "
    "situated.\n \n- Area description:\n The target area in the image is where the "
    "laptop is placed, which is on the left side of the desk. The laptop has a "
    "black-colored body with white-colored keys on the keyboard. It is positioned near a "
    "computer mouse and a phone, with its screen visible and displaying a webpage with "
    "red and black elements. The laptop's screen is slightly tilted towards the "
    "viewer.\n \n-Reprompt:\n a suitcase on the leftside of the image."
)

TEMPLATES: dict[TemplateName, PromptTemplate] = {
    TemplateName.DECOMPOSITION: PromptTemplate(TemplateName.DECOMPOSITION, _DECOMPOSITION_BODY),
    TemplateName.LOCALIZATION: PromptTemplate(TemplateName.LOCALIZATION, _LOCALIZATION_BODY),
    TemplateName.DESCRIPTION: PromptTemplate(TemplateName.DESCRIPTION, _DESCRIPTION_BODY),
    TemplateName.ICL: PromptTemplate(TemplateName.ICL, _ICL_BODY),
}

_PLACEHOLDERS = ("prompt", "simple prompts")


def render_template(name: TemplateName | str, substitutions: dict[str, str] | None = None) -> str:
    """Substitute placeholders into a template body.

    Placeholder substitution only; ``<img>`` is left intact as the
    attachment sentinel. Substitution keys with no matching placeholder
    are appended as trailing "key: value" lines, which is how callers
    thread per-call context (the current sub-prompt, user feedback)
    through templates whose fixed wording has no slot for it.
    """
    if isinstance(name, str):
        name = TemplateName(name)
    body = TEMPLATES[name].body
    substitutions = dict(substitutions or {})
    for key in _PLACEHOLDERS:
        slot = f"<{key}>"
        if slot in body:
            if key not in substitutions:
                raise TemplateError(f"template {name.value} is missing substitution {key!r}")
            body = body.replace(slot, substitutions.pop(key))
    for key, value in substitutions.items():
        body += f"\n{key}: {value}"
    return body
