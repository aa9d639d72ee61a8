"""Prompt template with optional language and task control tags."""

from __future__ import annotations

from dataclasses import dataclass

AUDIO_PLACEHOLDER = "<|audio_bos|><|AUDIO|><|audio_eos|>"
TASKS = ("ASR", "AST", "SQQA", "SSUM")
LANGUAGES = ("KO", "EN")


@dataclass(frozen=True)
class PromptSpec:
    task: str
    language: str
    user_text: str
    include_language_tag: bool = True
    include_task_tag: bool = True

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.language not in LANGUAGES:
            raise ValueError(f"language must be one of {LANGUAGES}, got {self.language!r}")
        if not self.user_text:
            raise ValueError("user_text must be nonempty")
        if "<|AUDIO|>" in self.user_text:
            raise ValueError("user_text must not contain the audio placeholder token")


def format_prompt(spec: PromptSpec) -> str:
    # tags sit between the audio placeholder and the user text, language first
    tags = ""
    if spec.include_language_tag:
        tags += f"<|{spec.language}|>"
    if spec.include_task_tag:
        tags += f"<|{spec.task}|>"
    return f"User: {AUDIO_PLACEHOLDER}{tags}{spec.user_text}\nAssistant:"
