import json
import math
from pathlib import Path

import pytest

from laenet import designer as dz
from laenet import dsl
from laenet.designer import (Budget, Candidate, ClientError, DesignAborted, DesignTranscript, MockClient, RoundRecord,
                             ScoreRecord, build_prompt, design, evaluate_candidates, feedback_block,
                             generate_candidates, parse_response, refine, replay, reselect, select_best)
from laenet.env import UavEnv
from laenet.ppo import GeometricHeuristic
from laenet.env import run_episode
from laenet.arpo import solve_scenario
from laenet.scenario import default_scenario

FIXTURE = Path(__file__).parent / "fixtures" / "mock_design.json"
SMALL = Budget(train_episodes=8, eval_episodes=1, seeds=(0,))


def _resp(*programs):
    return json.dumps({"candidates": [{"name": f"p{i}", "rationale": "r", "program": p}
                                      for i, p in enumerate(programs)]})


@pytest.fixture(scope="module")
def sc():
    return default_scenario()


@pytest.fixture(scope="module")
def sol(sc):
    return solve_scenario(sc)


def test_prompt_deterministic_and_contains_grammar(sc, sol):
    a = build_prompt(sc, solution=sol)
    b = build_prompt(sc, solution=sol)
    assert a.messages() == b.messages()
    assert dsl.GRAMMAR in a.user_text()
    assert a.messages()[0]["role"] == "system" and a.role_text.strip()
    assert "Designer insights" not in a.user_text()
    c = build_prompt(sc, human_notes="stay low", solution=sol)
    assert "Designer insights:\nstay low" in c.user_text()
    assert "Designer insights" not in build_prompt(sc, human_notes="   ", solution=sol).user_text()


def test_feedback_block_lists_all_scores():
    cands = [Candidate(f"c{i}", "slot", f"n{i}", program=dsl.parse("slot")) for i in range(5)]
    cands[4].program = None
    scores = [ScoreRecord(f"c{i}", -10.0 - i, 1, 8, True) for i in range(4)]
    scores.append(ScoreRecord("c4", -math.inf, 0, 0, False))
    text = feedback_block(cands, scores)
    for i in range(4):
        assert f"c{i} n{i}: {-10.0 - i:.6g}" in text
    assert "c4 n4: invalid" in text
    assert text.count("  c0: slot") == 1 and "  c3: slot" not in text  # top 3 only


def test_parse_response_variants():
    assert [e["program"] for e in parse_response(_resp("1", "slot"))] == ["1", "slot"]
    fenced = "Here:\n```json\n" + _resp("2") + "\n```\n"
    assert parse_response(fenced)[0]["program"] == "2"
    blocks = "a\n```\nsum(backlog)\n```\nb\n```dsl\n-slot\n```\n"
    assert [e["program"] for e in parse_response(blocks)] == ["sum(backlog)", "-slot"]
    assert parse_response("no structure at all") == []


def test_generate_partial_validity(sc, sol):
    client = MockClient([_resp("sum(backlog)", "-max(backlog)", "sum(backlog")])
    rec, tr = RoundRecord(0), DesignTranscript()
    cands = generate_candidates(build_prompt(sc, solution=sol), client, 4, rec, tr)
    assert [c.valid for c in cands] == [True, True, False]
    assert "bytes" in cands[2].diagnostic and client.calls == 1


def test_generate_truncates_to_k(sc, sol):
    client = MockClient([_resp("1", "2", "3", "4", "5")])
    cands = generate_candidates(build_prompt(sc, solution=sol), client, 3, RoundRecord(0), DesignTranscript())
    assert [c.id for c in cands] == ["c0", "c1", "c2"]


def test_garbage_twice_aborts_with_transcript(sc, sol):
    client = MockClient(["garbage", "more garbage"])
    tr = DesignTranscript()
    rec = RoundRecord(0)
    tr.rounds.append(rec)
    with pytest.raises(DesignAborted) as ei:
        generate_candidates(build_prompt(sc, solution=sol), client, 4, rec, tr)
    assert ei.value.transcript.all_responses() == ["garbage", "more garbage"]
    assert len(rec.prompts) == 2


def test_retry_then_success(sc, sol):
    client = MockClient(["nothing", _resp("slot")])
    cands = generate_candidates(build_prompt(sc, solution=sol), client, 2, RoundRecord(0), DesignTranscript())
    assert cands[0].valid and client.calls == 2


def test_client_failure_aborts(sc):
    with pytest.raises(DesignAborted):
        design(sc, MockClient([]), k=2, rounds=1, budget=SMALL)


def test_http_client_requires_url(monkeypatch):
    monkeypatch.delenv("LAENET_LLM_URL", raising=False)
    with pytest.raises(ClientError):
        dz.HttpChatClient().complete([{"role": "user", "content": "x"}])


def test_evaluation_isolation_and_determinism(sc, sol):
    cands = [Candidate("c0", "1 / (slot - slot)", program=dsl.parse("1 / (slot - slot)")),
             Candidate("c1", "-max(next_backlog) / max(init_backlog)",
                       program=dsl.parse("-max(next_backlog) / max(init_backlog)")),
             Candidate("c2", "sum(", diagnostic="syntax")]
    s1 = evaluate_candidates(cands, sc, SMALL, sol)
    s2 = evaluate_candidates(cands, sc, SMALL, sol)
    assert not s1[0].valid and "division by zero" in s1[0].diagnostic and s1[0].score == -math.inf
    assert s1[1].valid and math.isfinite(s1[1].score) and s1[1].score == s2[1].score
    assert not s1[2].valid


def test_selection_pure_and_tie_break():
    cands = [Candidate(f"c{i}", "slot", program=dsl.parse("slot")) for i in range(4)]
    scores = [ScoreRecord("c0", -3.0, 1, 1, True), ScoreRecord("c1", -2.0, 1, 1, True),
              ScoreRecord("c2", -2.0, 1, 1, True), ScoreRecord("c3", -math.inf, 0, 0, False)]
    assert select_best(cands, scores).id == "c1"
    assert select_best(cands[::-1], scores[::-1]).id == "c1"


def test_refine_lineage_and_insights(sc, sol):
    parent = Candidate("c0", dsl.RISK_PROGRAM, program=dsl.parse(dsl.RISK_PROGRAM))
    other = Candidate("c1", "0.0", program=dsl.parse("0.0"))
    scores = [ScoreRecord("c0", -10.0, 1, 1, True), ScoreRecord("c1", -12.0, 1, 1, True)]
    child_text = dsl.RISK_PROGRAM + " - 0.01 * slot"
    client = MockClient([_resp(child_text, "slot")])
    rec = RoundRecord(1)
    kids = refine([parent, other], scores, "", client, sc, 2, rec, DesignTranscript(), 2, solution=sol)
    assert kids[0].parent_id == "c0" and kids[1].parent_id is None
    assert "Designer insights" not in rec.prompts[0]
    assert "c0" in rec.prompts[0] and "-10" in rec.prompts[0]
    with pytest.raises(ValueError):
        refine([parent], [], None, client, sc, 2, RoundRecord(1), DesignTranscript(), 1)


def test_design_with_fixture_and_replay(sc, sol, tmp_path):
    client = MockClient.from_file(str(FIXTURE))
    best, tr = design(sc, client, k=4, rounds=3, budget=SMALL, solution=sol)
    scores = tr.all_scores()
    top = max(s.score for s in scores)
    assert best.id == min((s.candidate_id for s in scores if s.score == top), key=lambda i: int(i[1:]))
    assert any(not s.valid for s in scores)
    assert any(c.parent_id for c in tr.all_candidates())
    path = tmp_path / "t.json"
    tr.save(str(path))
    loaded = DesignTranscript.load(str(path))
    assert reselect(loaded).id == best.id
    again, tr2 = replay(loaded, sc)
    assert again.id == best.id and tr2.dumps() == tr.dumps()
    assert MockClient.from_file(str(path)).responses == tr.all_responses()


def test_rounds_one(sc, sol):
    client = MockClient([_resp("-max(next_backlog) / max(init_backlog)", "0.0")])
    best, tr = design(sc, client, k=2, rounds=1, budget=SMALL, solution=sol)
    assert len(tr.rounds) == 1 and client.calls == 1 and best.id in ("c0", "c1")


def test_no_client_on_step_path(sc, sol):
    client = MockClient([_resp("slot")])
    prog = dsl.parse(dsl.RISK_PROGRAM)
    params = dz._bind_params(sc, sol)
    env = UavEnv(sc, sol, dsl.reward_fn(prog, params))
    run_episode(env, GeometricHeuristic(sc.phys, 150.0))
    assert client.calls == 0


def test_risk_beats_zero_reward(sc, sol):
    cands = [Candidate("c0", dsl.RISK_PROGRAM, program=dsl.parse(dsl.RISK_PROGRAM)),
             Candidate("c1", dsl.ZERO_PROGRAM, program=dsl.parse(dsl.ZERO_PROGRAM))]
    risk, zero = evaluate_candidates(cands, sc, Budget(train_episodes=100, eval_episodes=1, seeds=(0,)), sol)
    assert risk.score > zero.score
