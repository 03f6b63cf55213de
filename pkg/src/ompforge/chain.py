"""Pragma generation strategies over any completion backend.

``basic_generate`` asks for the whole pragma in one completion.
``chain_of_omp`` grows the prompt one directive/clause at a time: each
stage keeps only the first component of the output and appends its name to
the prompt, stopping at end-of-pragma or the stage limit, then a final
phase generates the remaining text (control structures included) in one
completion.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .backends import CompletionRequest
from .errors import ChainStalled, MalformedPragma, OmpForgeError
from .pragma import PREFIX, canonical, first_component

log = logging.getLogger(__name__)

DEFAULT_N_CHAIN = 256


@dataclass(frozen=True)
class StageRecord:
    """One chain stage: the prompt sent, the raw output, and the component
    retained from it (None at end-of-pragma)."""

    prompt: str
    output: str
    retained: str | None


@dataclass
class ChainState:
    """Full record of one chain run.

    ``input_n`` always equals scope + newline + prefix + the space-joined
    retained components, so every stage prompt is reconstructible from the
    retained list alone.
    """

    scope: str
    input_n: str
    retained: list[str]
    stage: int
    n_chain_limit: int
    trace: list[StageRecord] = field(default_factory=list)
    final_output: str | None = None

    def prompt_suffix(self, prompt: str) -> str:
        return prompt[len(self.scope) + 1:]

    def to_dict(self, sample_id: str | None = None) -> dict:
        return {
            "id": sample_id,
            "stages": [{"prompt_suffix": self.prompt_suffix(rec.prompt),
                        "output": rec.output,
                        "retained": rec.retained} for rec in self.trace],
            "final": self.final_output,
        }


def _pragma_prompt(scope: str) -> str:
    return f"{scope}\n{PREFIX}"


def _first_line(text: str) -> str:
    return text.split("\n", 1)[0]


def _complete_line(backend, prompt: str, max_tokens: int) -> str:
    result = backend.complete(CompletionRequest(
        prompt=prompt, max_tokens=max_tokens, stop_sequences=("\n",),
        temperature=0.0))
    return _first_line(result.text)


def basic_generate(backend, scope: str, *, max_tokens: int = 256) -> str:
    """One-shot pragma generation from a code scope.

    The prompt is the scope, a newline, and the bare pragma prefix; the
    continuation is truncated at the first newline. The result is
    canonicalized when it parses and returned raw otherwise.
    """
    if not scope:
        raise ValueError("scope must be non-empty")
    continuation = _complete_line(backend, _pragma_prompt(scope), max_tokens)
    if not continuation.strip():
        log.debug("empty generation for scope %.60r", scope)
    text = PREFIX + continuation
    try:
        return canonical(text)
    except MalformedPragma:
        return text


def _leading_control(text: str) -> str | None:
    # balanced parenthesized argument at the head of the remainder, if any
    i = 0
    while i < len(text) and text[i] in " \t":
        i += 1
    if i >= len(text) or text[i] != "(":
        return None
    depth = 0
    for j in range(i, len(text)):
        if text[j] == "(":
            depth += 1
        elif text[j] == ")":
            depth -= 1
            if depth == 0:
                return text[i + 1:j]
    return None


def chain_of_omp(backend, scope: str, n_chain: int = DEFAULT_N_CHAIN, *,
                 max_tokens: int = 256,
                 retain_controls: bool = False) -> tuple[str, ChainState]:
    """Iterative pragma generation: retain one component per stage.

    Stage n completes the current prompt, takes the first directive/clause
    of the output, and appends its name to the prompt. The loop exits at
    end-of-pragma (empty or non-name output) or after ``n_chain`` stages.
    The final control phase then runs unconditionally and its whole
    continuation, control structures and all, is appended.

    By default a stage retains only the component name, leaving every
    control structure to the final phase; ``retain_controls=True`` carries
    a component's parenthesized argument forward with it instead (the
    alternative reading of what a stage keeps).

    Raises :class:`ChainStalled` when every one of the ``n_chain`` stages
    retained the same component without reaching end-of-pragma (the
    repeated-component analogue of an infinite loop; not applied at
    n_chain=1, where a single retention is normal).
    """
    if not scope:
        raise ValueError("scope must be non-empty")
    if n_chain < 1:
        raise ValueError("n_chain must be >= 1")
    prompt = _pragma_prompt(scope)
    retained: list[str] = []
    trace: list[StageRecord] = []
    stage = 0
    while stage < n_chain:
        output = _complete_line(backend, prompt, max_tokens)
        item, remainder = first_component(output)
        if item is None:
            trace.append(StageRecord(prompt, output, None))
            break
        kept = item.name
        if retain_controls:
            control = _leading_control(remainder)
            if control is not None:
                kept = f"{item.name}({control})"
        retained.append(kept)
        trace.append(StageRecord(prompt, output, kept))
        prompt = f"{prompt} {kept}"
        stage += 1
    else:
        if n_chain >= 2 and len(set(retained)) == 1:
            raise ChainStalled(
                f"component {retained[0]!r} retained for all {n_chain} stages "
                f"without end-of-pragma", trace=trace)
    final_output = _complete_line(backend, prompt, max_tokens)
    state = ChainState(scope=scope, input_n=prompt, retained=retained,
                       stage=stage, n_chain_limit=n_chain, trace=trace,
                       final_output=final_output)
    pragma_text = state.prompt_suffix(prompt) + final_output
    try:
        return canonical(pragma_text), state
    except MalformedPragma:
        return pragma_text, state


@dataclass(frozen=True)
class BatchResult:
    id: str
    pragma: str | None
    trace: ChainState | None = None
    error: str | None = None


def generate_batch(backend, samples, mode: str = "basic",
                   n_chain: int = DEFAULT_N_CHAIN,
                   jobs: int | None = 1,
                   retain_controls: bool = False) -> list[BatchResult]:
    """Generate a pragma per sample, in input order.

    A failure on one sample (backend outage, chain stall) is recorded on
    its result and the batch continues. ``jobs`` > 1 runs samples on a
    thread pool; each chain run stays sequential internally, and output
    order is the input order regardless of scheduling. Only use it with
    backends that are safe under concurrent requests (n-gram, remote).
    """
    if mode not in ("basic", "chain"):
        raise ValueError(f"unknown mode {mode!r}")

    def run(sample) -> BatchResult:
        try:
            if mode == "chain":
                pragma, state = chain_of_omp(backend, sample.scope, n_chain,
                                             retain_controls=retain_controls)
                return BatchResult(sample.id, pragma, state)
            return BatchResult(sample.id, basic_generate(backend, sample.scope))
        except OmpForgeError as exc:
            log.warning("sample %s failed: %s", sample.id, exc)
            return BatchResult(sample.id, None,
                               error=f"{type(exc).__name__}: {exc}")

    samples = list(samples)
    if len(samples) <= 1 or (jobs is not None and jobs <= 1):
        return [run(s) for s in samples]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run, samples))
