from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

PLACEHOLDERS = ("input_buffer", "library_info", "examples")
STRICT_MARKER = "Strict Output Formatting Requirements"
EXAMPLE_HEADER = "### Example {n}"

_PLACEHOLDER_RE = re.compile(r"\{(input_buffer|library_info|examples)\}")
_FINAL_RE = re.compile(r"^\s*final output\s*:?\s*$", re.IGNORECASE | re.MULTILINE)
_ANALYSIS_RE = re.compile(r"^\s*analysis\s*:?\s*$", re.IGNORECASE | re.MULTILINE)


class TemplateError(Exception):
    pass


@dataclass(frozen=True)
class Example:
    analysis: str
    final_output_hex: str

    def render(self) -> str:
        return f"Analysis:\n{self.analysis}\n\nFinal Output:\n{self.final_output_hex}"


@dataclass(frozen=True)
class PromptTemplates:
    system: str
    user: str
    skeleton: str
    examples: tuple

    @classmethod
    def load(cls, directory: Optional[Path] = None) -> "PromptTemplates":
        root = Path(directory) if directory is not None else default_prompt_dir()
        try:
            system = (root / "system.txt").read_text(encoding="utf-8")
            user = (root / "user.txt").read_text(encoding="utf-8")
        except OSError as e:
            raise TemplateError(f"cannot read prompt template: {e}") from e
        skeleton_path = root / "skeleton.txt"
        skeleton = (
            skeleton_path.read_text(encoding="utf-8").strip()
            if skeleton_path.exists()
            else "Analysis:\n<reasoning>\n\nFinal Output:\n<mutated hexadecimal string>"
        )
        ex_dir = root / "examples"
        examples = ()
        if ex_dir.is_dir():
            examples = tuple(parse_example(p.read_text(encoding="utf-8"), p.name) for p in sorted(ex_dir.glob("*.txt")))
        missing = [p for p in PLACEHOLDERS if "{" + p + "}" not in user]
        if missing:
            raise TemplateError(f"user template lacks placeholder(s): {', '.join(missing)}")
        if STRICT_MARKER not in system:
            raise TemplateError(f"system template lacks the {STRICT_MARKER!r} section")
        return cls(system, user, skeleton, examples)


def default_prompt_dir() -> Path:
    return Path(str(resources.files("semfuzz.mutator") / "prompts"))


@lru_cache(maxsize=None)
def default_templates() -> PromptTemplates:
    return PromptTemplates.load()


def parse_example(text: str, name: str = "<example>") -> Example:
    finals = list(_FINAL_RE.finditer(text))
    if not finals:
        raise TemplateError(f"{name}: no 'Final Output:' line")
    last = finals[-1]
    hex_part = "".join(text[last.end() :].split())
    head = text[: last.start()]
    m = _ANALYSIS_RE.search(head)
    analysis = head[m.end() :] if m else head
    if not hex_part:
        raise TemplateError(f"{name}: empty Final Output")
    return Example(analysis.strip(), hex_part)


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str
    shot: int
    examples: tuple
    input_hex: str


def render_examples(examples: Sequence[Example], skeleton: str) -> str:
    if not examples:
        return skeleton
    return "\n\n".join(f"{EXAMPLE_HEADER.format(n=i)}\n{ex.render()}" for i, ex in enumerate(examples, 1))


def build_prompt(
    head_hex: str,
    library_info: str,
    shot: int,
    example_pool: Optional[Sequence[Example]] = None,
    templates: Optional[PromptTemplates] = None,
) -> PromptBundle:
    if shot not in (0, 1, 3):
        raise ValueError(f"shot must be one of 0, 1, 3; got {shot}")
    templates = templates or default_templates()
    pool = templates.examples if example_pool is None else tuple(example_pool)
    if len(pool) < shot:
        raise TemplateError(f"{shot}-shot prompt needs {shot} examples, pool has {len(pool)}")
    chosen = tuple(pool[:shot])
    values = {
        "input_buffer": head_hex,
        "library_info": library_info,
        "examples": render_examples(chosen, templates.skeleton),
    }
    # one pass, so substituted text is never re-scanned for placeholders
    user = _PLACEHOLDER_RE.sub(lambda m: values[m.group(1)], templates.user)
    return PromptBundle(templates.system, user, shot, chosen, head_hex)
