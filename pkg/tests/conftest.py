import json

import pytest
import yaml


def pytest_runtest_logreport(report):
    # one visible pass/fail line per acceptance criterion
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        outcome = "PASS" if report.passed else "FAIL"
        print(f"\n[ACCEPTANCE] {name}: {outcome}")

# Six-sample trajectory fixture, hand-enumerated before the pipeline existed:
#   s1, s2: clean passes                      -> Accepted
#   s3: primary refusal, fallback recovers,
#       then passes both checks               -> Accepted
#   s4: refused by both prompts               -> RefusedFinal
#   s5: paraphrased, meaning check says No    -> ContentFail
#   s6: paraphrased, toxicity check says Yes  -> ToxicFail
# Totals: Accepted 3, RefusedFinal 1, ContentFail 1, ToxicFail 1,
#         refusal_first_pass 2, refusal_recovered 1.
SIX_SAMPLES = [
    {"id": "fix/s1", "source": "fixture", "text": "you are a total idiot S1"},
    {"id": "fix/s2", "source": "fixture", "text": "nobody likes you, loser S2"},
    {"id": "fix/s3", "source": "fixture", "text": "S3 awful garbage person"},
    {"id": "fix/s4", "source": "fixture", "text": "S4 you are the worst"},
    {"id": "fix/s5", "source": "fixture", "text": "S5 dreadful fool"},
    {"id": "fix/s6", "source": "fixture", "text": "S6 hateful rant here"},
]

SIX_SAMPLE_EXPECTED = {
    "Accepted": 3, "RefusedFinal": 1, "ContentFail": 1, "ToxicFail": 1, "VerdictError": 0,
}

# task anchors: "Rewrite the following" (task 1 primary), "Translate the
# following" (task 1 fallback), "Original:" (task 2), "still contain" (task 3)
SIX_SAMPLE_SCRIPT = [
    {"pattern": "Rewrite the following[\\s\\S]*S3",
     "response": "Sorry, I cannot assist with that."},
    {"pattern": "Rewrite the following[\\s\\S]*S4",
     "response": "Sorry, I cannot assist with that."},
    {"pattern": "Translate the following[\\s\\S]*S3",
     "response": "S3 is a person I strongly disagree with"},
    {"pattern": "Translate the following[\\s\\S]*S4",
     "response": "I'm unable to help with this request."},
    {"pattern": "Rewrite the following[\\s\\S]*S1",
     "response": "S1, I think you are mistaken"},
    {"pattern": "Rewrite the following[\\s\\S]*S2",
     "response": "S2, people find you difficult"},
    {"pattern": "Rewrite the following[\\s\\S]*S5",
     "response": "S5 a completely unrelated reply"},
    {"pattern": "Rewrite the following[\\s\\S]*S6",
     "response": "S6 you are truly awful still"},
    {"pattern": "Original:[\\s\\S]*S5", "response": "No"},
    {"contains": "Original:", "response": "Yes"},
    {"pattern": "still contain[\\s\\S]*S6", "response": "Yes"},
    {"contains": "still contain", "response": "No"},
]

# uninterrupted run: live completions per sample
# s1: 3, s2: 3, s3: 4 (refusal + fallback + 2 checks), s4: 2, s5: 2, s6: 3
SIX_SAMPLE_LIVE_CALLS = 17


@pytest.fixture
def fixture_env(tmp_path):
    """Materialize the six-sample fixture: samples file, mock scripts
    (full and interrupting), and a fast offline config."""
    samples_path = tmp_path / "samples.jsonl"
    samples_path.write_text(
        "\n".join(json.dumps(s) for s in SIX_SAMPLES) + "\n", encoding="utf-8")

    script_full = tmp_path / "script_full.json"
    script_full.write_text(json.dumps(SIX_SAMPLE_SCRIPT, indent=1), encoding="utf-8")

    # the 503 rule exhausts retries on s4's first task, aborting the run
    # after s1..s3 are terminal (concurrency is 1)
    script_interrupt = tmp_path / "script_interrupt.json"
    script_interrupt.write_text(
        json.dumps([{"pattern": "Rewrite the following[\\s\\S]*S4", "fail": 503}]
                   + SIX_SAMPLE_SCRIPT, indent=1),
        encoding="utf-8")

    config = {
        "seed": 7,
        "concurrency": 1,
        "gating": "llm_verdict",
        "retry": {"attempts": 2, "base_delay": 0.0, "jitter": 0.0},
        "mock_script": str(script_full),
        "scorer_mode": "mock",
        "split": {"ratios": [0.8, 0.1, 0.1], "seed": 7},
    }
    config_path = tmp_path / "config.yaml"
    config_path.write_text(yaml.safe_dump(config), encoding="utf-8")

    return {
        "dir": tmp_path,
        "samples": samples_path,
        "script_full": script_full,
        "script_interrupt": script_interrupt,
        "config": config_path,
        "config_dict": config,
    }
