"""Offline reward design with a chat model: generate, evaluate, refine, select.

Candidates are reward programs in the DSL of :mod:`laenet.dsl`; they are only
ever parsed and evaluated by that interpreter. Each valid candidate is scored
by training a fresh policy with it and measuring the resulting max latency.
Nothing here runs during an environment step; the trained policy alone acts.
"""
from __future__ import annotations

import json
import math
import os
import re
import time
import urllib.error
import urllib.request
from dataclasses import asdict, dataclass, field
from typing import Protocol, Sequence

import yaml

from . import dsl
from .arpo import ArpoSolution, solve_scenario
from .env import UavEnv
from .ppo.trainer import desk_config, evaluate_policy, mean_max_latency, train
from .rewards import default_risk_params
from .scenario import Scenario

MAX_PROMPT_CHARS = 48_000
TOP_M = 3
URL_ENV = "LAENET_LLM_URL"
KEY_ENV = "LAENET_LLM_KEY"
MODEL_ENV = "LAENET_LLM_MODEL"


class ClientError(RuntimeError):
    """Transport failure or exhausted mock responses."""


class DesignAborted(RuntimeError):
    def __init__(self, message: str, transcript: "DesignTranscript"):
        super().__init__(message)
        self.transcript = transcript


# --------------------------------------------------------------------------
# Prompts
# --------------------------------------------------------------------------

ROLE_TEXT = """\
You are an expert in reinforcement-learning reward design for UAV trajectory control.
You write reward functions as expressions in a small typed language (grammar below).
Only use features, parameters and functions that the grammar defines; do not assume
any information that is not given here.
Answer with a single JSON document and nothing else:
{"candidates": [{"name": "...", "rationale": "...", "program": "..."}]}"""

TASK_TEMPLATE = """\
A UAV serves {n_users} ground users inside a {side:.0f} m x {side:.0f} m area at altitudes
{h_min:.0f}-{h_max:.0f} m. Each slot lasts {alpha:g} s; an episode has at most {horizon} slots.
Each user must upload an image payload (resolution and transmit power are already
fixed by a resource allocator) over an air-to-ground link whose rate grows as the
UAV gets closer and higher in elevation. A user's total latency is its upload
completion time plus a fixed processing and downlink time.
Objective: minimize the maximum total latency over all users.

MDP:
  state  = per user: relative position (UAV - user), resolution, power, channel gain,
           remaining backlog in bits
  action = UAV displacement (dx, dy, dz) per slot, clipped to |(dx,dy)| <= {vxy:g} m
           and |dz| <= {vz:g} m
  reward = your program, evaluated once per slot
Users (x, y in m; initial backlog in bits):
{user_table}"""

REQUIREMENTS_TEXT = """\
Requirements:
- Return {k} candidates, each a complete program in the grammar.
- Prioritize the factors most relevant to the max-latency objective.
- The program must evaluate to a scalar; avoid division by quantities that can be zero.
- Parameters q, mu, gamma_d and backlog_scale are bound to normalizing defaults."""


@dataclass(frozen=True)
class PromptBundle:
    role_text: str
    task_text: str
    requirements_text: str
    code_snippets: str
    feedback_text: str = ""
    insights_text: str = ""

    def __post_init__(self) -> None:
        if not self.role_text.strip() or not self.task_text.strip():
            raise ValueError("role and task text must be non-empty")
        if len(self.user_text()) + len(self.role_text) > MAX_PROMPT_CHARS:
            raise ValueError(f"prompt exceeds {MAX_PROMPT_CHARS} characters")

    def user_text(self) -> str:
        parts = [self.task_text, self.requirements_text, "Reward language grammar:\n" + self.code_snippets]
        if self.feedback_text:
            parts.append(self.feedback_text)
        if self.insights_text:
            parts.append("Designer insights:\n" + self.insights_text)
        return "\n\n".join(parts)

    def messages(self) -> list[dict]:
        return [{"role": "system", "content": self.role_text}, {"role": "user", "content": self.user_text()}]


def _task_text(scenario: Scenario, solution: ArpoSolution | None) -> str:
    env = UavEnv(scenario, solution or solve_scenario(scenario))
    rows = [f"  {u.id}: ({u.pos_m[0]:.0f}, {u.pos_m[1]:.0f}), backlog {b:.4g}"
            for u, b in zip(scenario.users, env.init_backlog)]
    p = scenario.phys
    return TASK_TEMPLATE.format(
        n_users=scenario.n_users, side=2 * p.area_half_m, h_min=p.h_min_m, h_max=p.h_max_m,
        alpha=p.slot_len_s, horizon=p.horizon_slots, vxy=p.max_xy_step, vz=p.max_z_step,
        user_table="\n".join(rows))


def feedback_block(candidates: Sequence["Candidate"], scores: Sequence["ScoreRecord"], m: int = TOP_M) -> str:
    """Every score of the previous round, then the top-m programs to refine."""
    by_id = {s.candidate_id: s for s in scores}
    lines = ["Scores from the previous round (score = -mean max latency in s; higher is better):"]
    for c in candidates:
        s = by_id.get(c.id)
        shown = "invalid" if s is None or not s.valid else f"{s.score:.6g}"
        lines.append(f"  {c.id} {c.name}: {shown}")
    top = top_candidates(candidates, scores, m)
    lines.append(f"Refine the top {len(top)} candidates below. Keep what works; set \"parent\" to the id you refine.")
    for c in top:
        lines.append(f"  {c.id}: {c.program_text}")
    return "\n".join(lines)


def build_prompt(scenario: Scenario, grammar: str = dsl.GRAMMAR, k: int = 4,
                 feedback: str = "", human_notes: str | None = None,
                 solution: ArpoSolution | None = None) -> PromptBundle:
    return PromptBundle(
        role_text=ROLE_TEXT,
        task_text=_task_text(scenario, solution),
        requirements_text=REQUIREMENTS_TEXT.format(k=k),
        code_snippets=grammar,
        feedback_text=feedback,
        insights_text=(human_notes or "").strip(),
    )


# --------------------------------------------------------------------------
# Clients
# --------------------------------------------------------------------------

class ChatClient(Protocol):
    calls: int

    def complete(self, messages: list[dict]) -> str: ...


class MockClient:
    """Replays an ordered list of canned responses; counts calls."""

    def __init__(self, responses: Sequence[str]):
        self.responses = list(responses)
        self.calls = 0

    @classmethod
    def from_file(cls, path: str) -> "MockClient":
        with open(path) as fh:
            doc = yaml.safe_load(fh)
        if isinstance(doc, dict) and "rounds" in doc:  # a saved transcript
            return cls(DesignTranscript.from_dict(doc).all_responses())
        if isinstance(doc, dict):
            doc = doc.get("responses")
        if not isinstance(doc, list) or not all(isinstance(r, str) for r in doc):
            raise ValueError(f"{path}: expected a list of response strings")
        return cls(doc)

    def complete(self, messages: list[dict]) -> str:
        if self.calls >= len(self.responses):
            self.calls += 1
            raise ClientError("mock client has no more responses")
        out = self.responses[self.calls]
        self.calls += 1
        return out


class HttpChatClient:
    """OpenAI-compatible chat-completions endpoint over plain HTTP(S)."""

    def __init__(self, url: str | None = None, key: str | None = None, model: str | None = None,
                 timeout_s: float = 60.0, retries: int = 1):
        self.url = url or os.environ.get(URL_ENV)
        if not self.url:
            raise ClientError(f"no endpoint: set {URL_ENV}")
        self.key = key if key is not None else os.environ.get(KEY_ENV, "")
        self.model = model or os.environ.get(MODEL_ENV, "gpt-4o-mini")
        self.timeout_s = timeout_s
        self.retries = retries
        self.calls = 0

    def _endpoint(self) -> str:
        u = self.url.rstrip("/")
        return u if u.endswith("/chat/completions") else u + "/chat/completions"

    def complete(self, messages: list[dict]) -> str:
        body = json.dumps({"model": self.model, "messages": messages, "temperature": 0.0}).encode()
        headers = {"Content-Type": "application/json"}
        if self.key:
            headers["Authorization"] = f"Bearer {self.key}"
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            self.calls += 1
            req = urllib.request.Request(self._endpoint(), data=body, headers=headers, method="POST")
            try:
                with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
                    doc = json.loads(resp.read().decode())
                return doc["choices"][0]["message"]["content"]
            except (urllib.error.URLError, TimeoutError, KeyError, IndexError, json.JSONDecodeError) as exc:
                last = exc
                if attempt < self.retries:
                    time.sleep(1.0)
        raise ClientError(f"chat request failed: {last}")


# --------------------------------------------------------------------------
# Candidates and scores
# --------------------------------------------------------------------------

@dataclass
class Candidate:
    id: str
    program_text: str
    name: str = ""
    rationale: str = ""
    round: int = 0
    parent_id: str | None = None
    program: dsl.RewardProgram | None = None
    diagnostic: str = ""

    @property
    def valid(self) -> bool:
        return self.program is not None

    @property
    def index(self) -> int:
        return int(self.id.lstrip("c"))

    def to_dict(self) -> dict:
        return {"id": self.id, "name": self.name, "rationale": self.rationale, "program": self.program_text,
                "round": self.round, "parent": self.parent_id, "valid": self.valid, "diagnostic": self.diagnostic}


@dataclass(frozen=True)
class ScoreRecord:
    candidate_id: str
    score: float                 # -mean max latency; -inf when invalid
    episodes: int
    train_episodes: int
    valid: bool
    diagnostic: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["score"] = None if math.isinf(self.score) else self.score
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreRecord":
        d = dict(d)
        d["score"] = -math.inf if d["score"] is None else float(d["score"])
        return cls(**d)


@dataclass(frozen=True)
class Budget:
    train_episodes: int = 100
    eval_episodes: int = 1
    seeds: tuple[int, ...] = (0,)


def _make_candidate(cid: str, entry: dict, round_idx: int) -> Candidate:
    text = str(entry.get("program", "")).strip()
    cand = Candidate(cid, text, str(entry.get("name", "")), str(entry.get("rationale", "")), round_idx,
                     entry.get("parent"))
    try:
        cand.program = dsl.parse(text)
    except dsl.DslError as exc:
        cand.diagnostic = str(exc)
    return cand


_FENCE_RE = re.compile(r"```[a-zA-Z]*\n(.*?)```", re.DOTALL)


def parse_response(text: str) -> list[dict]:
    """Candidate entries from a structured response, falling back to fenced blocks."""
    docs = [text] + _FENCE_RE.findall(text)
    for body in docs:
        try:
            doc = json.loads(body)
        except (json.JSONDecodeError, TypeError):
            continue
        if isinstance(doc, dict) and isinstance(doc.get("candidates"), list):
            return [e if isinstance(e, dict) else {"program": str(e)} for e in doc["candidates"]]
    return [{"name": f"block{i}", "program": b.strip()} for i, b in enumerate(_FENCE_RE.findall(text))
            if not b.lstrip().startswith("{")]


@dataclass
class RoundRecord:
    index: int
    prompts: list = field(default_factory=list)      # rendered user prompts, one per client call
    responses: list = field(default_factory=list)
    candidates: list = field(default_factory=list)   # Candidate
    scores: list = field(default_factory=list)       # ScoreRecord
    human_notes: str = ""

    def to_dict(self) -> dict:
        return {"index": self.index, "prompts": list(self.prompts), "responses": list(self.responses),
                "candidates": [c.to_dict() for c in self.candidates],
                "scores": [s.to_dict() for s in self.scores], "human_notes": self.human_notes}


@dataclass
class DesignTranscript:
    rounds: list = field(default_factory=list)
    selected_id: str | None = None
    selected_program: str | None = None
    config: dict = field(default_factory=dict)

    def all_candidates(self) -> list[Candidate]:
        return [c for r in self.rounds for c in r.candidates]

    def all_scores(self) -> list[ScoreRecord]:
        return [s for r in self.rounds for s in r.scores]

    def all_responses(self) -> list[str]:
        return [x for r in self.rounds for x in r.responses]

    def to_dict(self) -> dict:
        return {"config": self.config, "rounds": [r.to_dict() for r in self.rounds],
                "selected_id": self.selected_id, "selected_program": self.selected_program}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def from_dict(cls, doc: dict) -> "DesignTranscript":
        rounds = []
        for r in doc.get("rounds", []):
            cands = [_make_candidate(c["id"], c, c.get("round", r["index"])) for c in r.get("candidates", [])]
            for c, raw in zip(cands, r.get("candidates", [])):
                c.parent_id = raw.get("parent")
            rounds.append(RoundRecord(r["index"], list(r.get("prompts", [])), list(r.get("responses", [])), cands,
                                      [ScoreRecord.from_dict(s) for s in r.get("scores", [])],
                                      r.get("human_notes", "")))
        return cls(rounds, doc.get("selected_id"), doc.get("selected_program"), dict(doc.get("config", {})))

    @classmethod
    def load(cls, path: str) -> "DesignTranscript":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# --------------------------------------------------------------------------
# Loop stages
# --------------------------------------------------------------------------

def _ask(bundle: PromptBundle, client: ChatClient, record: RoundRecord, transcript: DesignTranscript) -> str:
    record.prompts.append(bundle.user_text())
    try:
        text = client.complete(bundle.messages())
    except ClientError as exc:
        raise DesignAborted(f"client failure in round {record.index}: {exc}", transcript) from exc
    record.responses.append(text)
    return text


def generate_candidates(bundle: PromptBundle, client: ChatClient, k: int, record: RoundRecord,
                        transcript: DesignTranscript, next_id: int = 0) -> list[Candidate]:
    """Ask for k candidates; one retry if none parse; abort if the retry also yields none."""
    if k < 1:
        raise ValueError("k must be >= 1")
    for attempt in range(2):
        entries = parse_response(_ask(bundle, client, record, transcript))[:k]
        cands = [_make_candidate(f"c{next_id + i}", e, record.index) for i, e in enumerate(entries)]
        if any(c.valid for c in cands):
            record.candidates.extend(cands)
            return cands
        record.candidates.extend(cands)
        next_id += len(cands)
    raise DesignAborted(f"no valid candidates in round {record.index} after one retry", transcript)


def _bind_params(scenario: Scenario, solution: ArpoSolution) -> dict:
    env = UavEnv(scenario, solution)
    return default_risk_params(env.init_backlog, scenario.phys.area_diagonal_m).as_dict()


def evaluate_candidates(candidates: Sequence[Candidate], scenario: Scenario, budget: Budget,
                        solution: ArpoSolution | None = None) -> list[ScoreRecord]:
    """Train a fresh policy per (candidate, seed); score = -mean max latency of the frozen policy."""
    solution = solution or solve_scenario(scenario)
    params = _bind_params(scenario, solution)
    out = []
    for c in candidates:
        if not c.valid:
            out.append(ScoreRecord(c.id, -math.inf, 0, 0, False, c.diagnostic))
            continue
        try:
            lat = []
            for seed in budget.seeds:
                res = train(scenario, solution, dsl.reward_fn(c.program, params),
                            desk_config(seed=seed, episodes=budget.train_episodes))
                logs = evaluate_policy(scenario, solution, res.agent(),
                                       seeds=[seed * 1000 + j for j in range(budget.eval_episodes)])
                lat.append(mean_max_latency(logs))
            score = -sum(lat) / len(lat)
            out.append(ScoreRecord(c.id, score, budget.eval_episodes * len(budget.seeds),
                                   budget.train_episodes * len(budget.seeds), True))
        except (dsl.DslEvalError, FloatingPointError, ValueError) as exc:
            out.append(ScoreRecord(c.id, -math.inf, 0, 0, False, f"evaluation failed: {exc}"))
    return out


def _rank_key(c: Candidate, by_id: dict) -> tuple:
    s = by_id.get(c.id)
    score = s.score if s is not None and s.valid else -math.inf
    return (-score, c.index)


def top_candidates(candidates: Sequence[Candidate], scores: Sequence[ScoreRecord], m: int = TOP_M) -> list[Candidate]:
    by_id = {s.candidate_id: s for s in scores}
    ranked = sorted((c for c in candidates if by_id.get(c.id) is not None and by_id[c.id].valid),
                    key=lambda c: _rank_key(c, by_id))
    return ranked[:m]


def select_best(candidates: Sequence[Candidate], scores: Sequence[ScoreRecord]) -> Candidate:
    """Highest score; ties go to the lowest candidate id."""
    best = top_candidates(candidates, scores, 1)
    if not best:
        raise ValueError("no valid scored candidate")
    return best[0]


def refine(candidates: Sequence[Candidate], scores: Sequence[ScoreRecord], human_notes: str | None,
           client: ChatClient, scenario: Scenario, k: int, record: RoundRecord, transcript: DesignTranscript,
           next_id: int, m: int = TOP_M, solution: ArpoSolution | None = None) -> list[Candidate]:
    if not scores:
        raise ValueError("refine needs a scored round")
    bundle = build_prompt(scenario, k=k, feedback=feedback_block(candidates, scores, m),
                          human_notes=human_notes, solution=solution)
    children = generate_candidates(bundle, client, k, record, transcript, next_id)
    top = top_candidates(candidates, scores, m)
    known = {c.id for c in candidates}
    for ch in children:
        if ch.parent_id in known:
            continue
        ch.parent_id = None
        if ch.valid:
            text = dsl.print_canonical(ch.program)
            for p in top:
                if dsl.print_canonical(p.program) in text:
                    ch.parent_id = p.id
                    break
    return children


def design(scenario: Scenario, client: ChatClient, k: int = 4, rounds: int = 3, budget: Budget = Budget(),
           human_notes: str | None = None, m: int = TOP_M,
           solution: ArpoSolution | None = None) -> tuple[Candidate, DesignTranscript]:
    """Generate, evaluate, then (refine, evaluate) for the remaining rounds; select the best overall."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    solution = solution or solve_scenario(scenario)
    transcript = DesignTranscript(config={"k": k, "rounds": rounds, "top_m": m, "budget": asdict(budget),
                                          "human_notes": bool(human_notes)})
    notes = (human_notes or "").strip()
    next_id = 0
    prev_c: list[Candidate] = []
    prev_s: list[ScoreRecord] = []
    for r in range(rounds):
        record = RoundRecord(r, human_notes=notes if r > 0 else "")
        transcript.rounds.append(record)
        if r == 0:
            cands = generate_candidates(build_prompt(scenario, k=k, solution=solution), client, k, record,
                                        transcript, next_id)
        else:
            cands = refine(prev_c, prev_s, notes, client, scenario, k, record, transcript, next_id, m, solution)
        next_id = max(c.index for c in transcript.all_candidates()) + 1
        record.scores = evaluate_candidates(cands, scenario, budget, solution)
        prev_c, prev_s = cands, record.scores
    best = select_best(transcript.all_candidates(), transcript.all_scores())
    transcript.selected_id = best.id
    transcript.selected_program = best.program_text
    return best, transcript


def reselect(transcript: DesignTranscript) -> Candidate:
    """Selection from recorded scores only (no client, no training)."""
    return select_best(transcript.all_candidates(), transcript.all_scores())


def replay(transcript: DesignTranscript, scenario: Scenario, budget: Budget | None = None
           ) -> tuple[Candidate, DesignTranscript]:
    """Re-run the loop with the recorded responses standing in for the client."""
    cfg = transcript.config
    b = budget or Budget(**{**cfg.get("budget", {}), "seeds": tuple(cfg.get("budget", {}).get("seeds", (0,)))})
    notes = transcript.rounds[1].human_notes if len(transcript.rounds) > 1 else None
    return design(scenario, MockClient(transcript.all_responses()), k=cfg.get("k", 4),
                  rounds=cfg.get("rounds", len(transcript.rounds)), budget=b, human_notes=notes,
                  m=cfg.get("top_m", TOP_M))
