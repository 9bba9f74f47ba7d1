"""Retrieval layer: mock client, embeddings, strategies, triple-run validation."""

import json
import logging

import numpy as np
import pytest

from ehicl.hand import HandParams
from ehicl.retrieval import (
    ClassificationFailureError,
    ClassifyResult,
    HttpVlmClient,
    InvolvementClass,
    MalformedReplyError,
    MockVlmClient,
    TemplateDb,
    TemplateRecord,
    ValidationInterrupted,
    ValidationState,
    apply_validation,
    bin_similarity_gain,
    classify_involvement,
    cosine_similarity,
    describe,
    embed_text,
    load_db,
    load_prompts,
    parse_involvement_reply,
    retrieve_template,
    save_db,
    validate_templates,
)
from ehicl.retrieval.client import VlmTransportError
from ehicl.retrieval.descriptions import description_sentence
from ehicl.retrieval.embed import token_bucket
from ehicl.rng import derive_rng, seeded_rng

VERBS = ["grasping", "holding", "touching", "pointing at", "lifting"]
NOUNS = ["cup", "phone", "book", "bottle", "pen", "bowl"]


def _params(rng, side):
    return HandParams(
        0.3 * rng.standard_normal((15, 3)), rng.standard_normal(10), 0.5 * rng.standard_normal(3), side
    )


def _make_db(n=40, seed=0, validated=True):
    rng = seeded_rng(seed)
    records = []
    for i in range(n):
        involvement = InvolvementClass(int(rng.integers(4)))
        verb = VERBS[rng.integers(len(VERBS))]
        noun = NOUNS[rng.integers(len(NOUNS))]
        sides = involvement.sides
        records.append(
            TemplateRecord(
                record_id=f"tpl-{i:04d}",
                involvement=involvement,
                description=description_sentence(involvement, verb, noun),
                coarse={s: _params(rng, s) for s in sides},
                gt={s: _params(rng, s) for s in sides},
                image_features=rng.standard_normal(16),
                validated=validated,
            )
        )
    return TemplateDb(records)


def _mock_for(db, extra=None, **kwargs):
    prompts = load_prompts()
    return MockVlmClient(db.metadata_for_mock(extra), prompts, **kwargs), prompts


# ---------------------------------------------------------------- prompts


def test_prompts_are_verbatim():
    prompts = load_prompts()
    assert prompts["classify_system"].startswith(
        "\nYou are an image understanding agent."
    )
    assert "- 0: Only the left hand is interacting with an object" in prompts["classify_system"]
    assert "- 3: Neither hand is interacting with any object" in prompts["classify_system"]
    # the source prompt's response line really does offer [0, 1, 2, -1]
    assert "one of [0, 1, 2, -1]" in prompts["classify_system"]
    assert prompts["classify_user"].endswith("- 3: Neither hand is interacting\n\n\n")
    assert '"No hand involvement."' in prompts["description_user"]
    assert prompts["description_system"] == ""
    assert prompts["reasoning_system"].startswith("\nYou are a reasoning agent")
    assert "left hand grasping a cup" in prompts["reasoning_user"]


def test_prompts_override_file(tmp_path):
    prompts = load_prompts()
    alt = dict(prompts, classify_user="short")
    path = tmp_path / "prompts.json"
    path.write_text(json.dumps(alt), encoding="utf-8")
    assert load_prompts(path)["classify_user"] == "short"
    path.write_text(json.dumps({"classify_system": "x"}), encoding="utf-8")
    with pytest.raises(ValueError, match="missing keys"):
        load_prompts(path)


# ------------------------------------------------------------ classification


def test_classify_mock_passthrough():
    db = _make_db(8, seed=1)
    client, prompts = _mock_for(db)
    left_only = next(r for r in db.records if r.involvement == InvolvementClass.LEFT_ONLY)
    result = classify_involvement(left_only.image_ref, client, prompts)
    assert result.value == InvolvementClass.LEFT_ONLY
    assert result.raw_replies == ["0"]


def test_classify_full_flip_never_matches_truth():
    db = _make_db(20, seed=2)
    client, prompts = _mock_for(db, flip_rate=1.0)
    for r in db.records:
        got = classify_involvement(r.image_ref, client, prompts).value
        assert got != r.involvement


def test_reply_parser_contract():
    assert parse_involvement_reply("2") == InvolvementClass.BOTH
    assert parse_involvement_reply(" 3 \n") == InvolvementClass.NONE
    for bad in ("both hands", "-1", "4", "", "0 1"):
        with pytest.raises(MalformedReplyError):
            parse_involvement_reply(bad)


def test_classify_retries_then_fails():
    db = _make_db(4, seed=3)
    client, prompts = _mock_for(db, malformed_first=2)
    result = classify_involvement(db.records[0].image_ref, client, prompts, retries=2)
    assert len(result.raw_replies) == 3  # two malformed, one good
    client2, _ = _mock_for(db, malformed_first=10)
    with pytest.raises(ClassificationFailureError):
        classify_involvement(db.records[0].image_ref, client2, prompts, retries=2)


# -------------------------------------------------------------- description


def test_describe_mock_template_fill():
    db = _make_db(1, seed=4)
    rec = db.records[0]
    meta = {rec.image_ref: {"involvement": 1, "verb": "grasping", "noun": "cup"}}
    prompts = load_prompts()
    client = MockVlmClient(meta, prompts)
    assert describe(rec.image_ref, "description", client, prompts) == "Right hand grasping a cup."


def test_describe_no_hands():
    prompts = load_prompts()
    client = MockVlmClient({"q": {"involvement": 3, "verb": "x", "noun": "y"}}, prompts)
    assert describe("q", "description", client, prompts) == "No hand involvement."


def test_describe_styles_differ():
    prompts = load_prompts()
    client = MockVlmClient({"q": {"involvement": 2, "verb": "holding", "noun": "book"}}, prompts)
    a = describe("q", "description", client, prompts)
    b = describe("q", "reasoning", client, prompts)
    assert a != b
    assert a == "Both hands holding a book."
    with pytest.raises(ValueError, match="prompt_style"):
        describe("q", "poetic", client, prompts)


# ---------------------------------------------------------------- embedding


def test_embed_deterministic():
    a = embed_text("Right hand grasping a cup.")
    b = embed_text("Right hand grasping a cup.")
    assert np.array_equal(a, b)
    assert abs(np.linalg.norm(a) - 1.0) < 1e-9
    assert cosine_similarity(a, b) == pytest.approx(1.0)


def test_embed_disjoint_tokens_orthogonal():
    # explicit bucket oracle: verify the two token sets share no bucket
    ta, tb = ["left", "hand", "cup"], ["right", "bottle", "pen"]
    buckets_a = {token_bucket(t) for t in ta}
    buckets_b = {token_bucket(t) for t in tb}
    assert buckets_a.isdisjoint(buckets_b)  # constructed collision-free pair
    va = embed_text(" ".join(ta))
    vb = embed_text(" ".join(tb))
    assert cosine_similarity(va, vb) == 0.0


def test_embed_rejects_empty():
    for bad in ("", "   ", "\n", "..?!"):
        with pytest.raises(ValueError):
            embed_text(bad)


def test_cosine_values():
    assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0
    val = cosine_similarity([1.0, 0.0], [1.0 / np.sqrt(2), 1.0 / np.sqrt(2)])
    assert abs(val - 1.0 / np.sqrt(2)) < 1e-9
    with pytest.raises(ValueError, match="zero"):
        cosine_similarity([0.0, 0.0], [1.0, 0.0])


# ---------------------------------------------------------------- retrieval


def test_textual_retrieval_finds_exact_duplicate():
    db = _make_db(30, seed=5)
    target = db.records[7]
    meta = {
        "query": {
            "involvement": int(target.involvement),
            "verb": "grasping" if "grasping" in target.description else target.description.split()[2],
            "noun": target.description.rstrip(".").split()[-1],
        }
    }
    # craft the query metadata so its mock description equals the target's
    verb = target.description.rstrip(".").split(" a ")[0].split(" ", 2)[2]
    meta["query"] = {"involvement": int(target.involvement), "verb": verb, "noun": target.description.rstrip(".").split(" a ")[1]}
    client, prompts = _mock_for(db, extra=meta)
    got = retrieve_template("query", db, "textual", client, prompts)
    assert got.description == target.description


def test_visual_retrieval_matches_class():
    db = _make_db(60, seed=6)
    client, prompts = _mock_for(db, extra={"q3": {"involvement": 3, "verb": "x", "noun": "y"}})
    rng = derive_rng(0, "retrieve")
    got = retrieve_template("q3", db, "visual", client, prompts, rng=rng)
    assert got.involvement == InvolvementClass.NONE


def test_visual_retrieval_deterministic_per_seed():
    db = _make_db(60, seed=7)
    client, prompts = _mock_for(db, extra={"q": {"involvement": 2, "verb": "holding", "noun": "cup"}})
    a = retrieve_template("q", db, "visual", client, prompts, rng=derive_rng(3, "r"))
    b = retrieve_template("q", db, "visual", client, prompts, rng=derive_rng(3, "r"))
    assert a.record_id == b.record_id


def test_textual_argmax_equals_brute_force_scan():
    db = _make_db(200, seed=8)
    prompts = load_prompts()
    for qi in range(5):
        meta = {
            "q": {
                "involvement": 2,
                "verb": VERBS[qi % len(VERBS)],
                "noun": NOUNS[qi % len(NOUNS)],
            }
        }
        client = MockVlmClient(db.metadata_for_mock(meta), prompts)
        got = retrieve_template("q", db, "textual", client, prompts)
        qtext = describe("q", "description", client, prompts)
        qv = embed_text(qtext)
        sims = [cosine_similarity(qv, r.text_embedding) for r in db.validated_records()]
        expected = db.validated_records()[int(np.argmax(sims))]
        assert got.record_id == expected.record_id


def test_combined_retrieval_class_and_similarity():
    db = _make_db(120, seed=9)
    client, prompts = _mock_for(db, extra={"q": {"involvement": 0, "verb": "grasping", "noun": "cup"}})
    got = retrieve_template("q", db, "combined", client, prompts)
    assert got.involvement == InvolvementClass.LEFT_ONLY
    qv = embed_text("Left hand grasping a cup.")
    bucket = db.class_bucket(InvolvementClass.LEFT_ONLY)
    sims = [cosine_similarity(qv, r.text_embedding) for r in bucket]
    assert got.record_id == bucket[int(np.argmax(sims))].record_id


def test_query_excluded_from_pool():
    db = _make_db(30, seed=10)
    target = db.records[4]
    client, prompts = _mock_for(db)
    got = retrieve_template(
        target.image_ref, db, "textual", client, prompts, exclude_id=target.record_id
    )
    assert got.record_id != target.record_id


def test_empty_bucket_falls_back_with_warning(caplog):
    db = _make_db(30, seed=11)
    for r in db.records:  # wipe out class 3 entirely
        if r.involvement == InvolvementClass.NONE:
            r.involvement = InvolvementClass.BOTH
    db = TemplateDb(db.records)
    client, prompts = _mock_for(db, extra={"q": {"involvement": 3, "verb": "x", "noun": "y"}})
    with caplog.at_level(logging.WARNING):
        got = retrieve_template("q", db, "visual", client, prompts, rng=derive_rng(0, "x"))
    assert got is not None
    assert any("empty class" in m for m in caplog.messages)


# --------------------------------------------------------------- validation


def test_validation_zero_flip_validates_everything():
    db = _make_db(25, seed=12, validated=False)
    client, prompts = _mock_for(db, flip_rate=0.0)
    state = validate_templates(db, client, prompts)
    apply_validation(db, state)
    assert all(r.validated for r in db.records)
    assert all(len(v) == 3 for v in state.results.values())


def test_validation_consistency_rule():
    state = ValidationState(runs=3, results={"a": [0, 0, 1], "b": [2, 2, 2], "c": [1, 1]})
    assert not state.consistent("a")
    assert state.consistent("b")
    assert not state.consistent("c")


def test_validation_fraction_matches_enumeration_oracle():
    """Agreement probability from direct enumeration of the flip model."""
    p = 0.5
    prob = 0.0
    outcomes = [(0, 1.0 - p)] + [(k, p / 3.0) for k in (1, 2, 3)]  # 0 = truth
    for c1, p1 in outcomes:
        for c2, p2 in outcomes:
            for c3, p3 in outcomes:
                if c1 == c2 == c3:
                    prob += p1 * p2 * p3
    assert abs(prob - ((1 - p) ** 3 + p**3 / 9)) < 1e-12

    db = _make_db(2000, seed=13, validated=False)
    client, prompts = _mock_for(db, flip_rate=p, seed=99)
    state = validate_templates(db, client, prompts)
    apply_validation(db, state)
    fraction = np.mean([r.validated for r in db.records])
    assert abs(fraction - prob) < 0.03


def test_validation_resumes_after_transport_failure():
    db = _make_db(20, seed=14, validated=False)
    prompts = load_prompts()
    meta = db.metadata_for_mock()
    failing = MockVlmClient(meta, prompts, fail_after=31)
    with pytest.raises(ValidationInterrupted) as exc_info:
        validate_templates(db, failing, prompts)
    partial = ValidationState.from_json(exc_info.value.state.to_json())  # persistable
    done_runs = sum(len(v) for v in partial.results.values())
    assert 0 < done_runs < 60
    fresh = MockVlmClient(meta, prompts)
    state = validate_templates(db, fresh, prompts, state=partial)
    apply_validation(db, state)
    assert all(r.validated for r in db.records)
    assert fresh.calls == 60 - done_runs  # only the missing runs were redone


def test_apply_validation_requires_complete_state():
    db = _make_db(3, seed=15, validated=False)
    with pytest.raises(ValueError, match="incomplete"):
        apply_validation(db, ValidationState(runs=3, results={}))


# -------------------------------------------------------------- persistence


def test_db_round_trip(tmp_path):
    db = _make_db(12, seed=16)
    db.records[3].validated = False
    save_db(db, tmp_path / "db")
    loaded = load_db(tmp_path / "db")
    assert len(loaded) == len(db)
    for orig, back in zip(db.records, loaded.records):
        assert back.record_id == orig.record_id
        assert back.involvement == orig.involvement
        assert back.description == orig.description
        assert back.validated == orig.validated
        assert np.array_equal(back.image_features, orig.image_features)
        assert np.array_equal(back.text_embedding, orig.text_embedding)
        for side in orig.gt:
            assert np.array_equal(back.gt[side].theta, orig.gt[side].theta)
            assert np.array_equal(back.coarse[side].beta, orig.coarse[side].beta)


# ------------------------------------------------------------- http client


def test_http_request_shape_and_parse():
    captured = {}

    def transport(url, body, headers, timeout):
        captured.update(url=url, body=json.loads(body), headers=headers, timeout=timeout)
        reply = {"choices": [{"message": {"content": [{"type": "text", "text": "2"}]}}]}
        return json.dumps(reply).encode("utf-8")

    client = HttpVlmClient(
        base_url="http://vlm.test/v1/", model="m-big", api_key="sekret", transport=transport
    )
    out = client.complete("SYS", "USR", "img-0042")
    assert out == "2"
    assert captured["url"] == "http://vlm.test/v1/chat/completions"
    assert captured["headers"]["Authorization"] == "Bearer sekret"
    body = captured["body"]
    assert body["model"] == "m-big"
    assert body["messages"][0] == {"role": "system", "content": "SYS"}
    user = body["messages"][1]
    assert user["role"] == "user"
    assert user["content"][0] == {"type": "text", "text": "USR"}
    assert user["content"][1]["image_url"]["url"] == "img-0042"


def test_http_client_env_config(monkeypatch):
    monkeypatch.setenv("EHICL_VLM_URL", "http://env.test")
    monkeypatch.setenv("EHICL_VLM_KEY", "envkey")
    client = HttpVlmClient(transport=lambda *a: b"{}")
    assert client.base_url == "http://env.test"
    assert client.api_key == "envkey"
    monkeypatch.delenv("EHICL_VLM_URL")
    with pytest.raises(ValueError, match="EHICL_VLM_URL"):
        HttpVlmClient()


def test_http_transport_error_names_endpoint():
    def transport(url, body, headers, timeout):
        raise VlmTransportError(f"POST {url} failed: connection refused")

    client = HttpVlmClient(base_url="http://down.test", transport=transport)
    with pytest.raises(VlmTransportError, match="down.test"):
        client.complete("s", "u", "img")


def test_http_string_content_reply():
    transport = lambda *a: json.dumps(
        {"choices": [{"message": {"content": "plain"}}]}
    ).encode("utf-8")
    client = HttpVlmClient(base_url="http://x.test", transport=transport)
    assert client.complete("s", "u", "i") == "plain"


# ----------------------------------------------------------------- binning


def test_similarity_gain_binning_matches_hand_computation():
    sims = [0.05, 0.15, 0.15, 0.35, 0.45, 0.55, 0.72, 0.78, 0.95, 1.0]
    gains = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]
    bins = bin_similarity_gain(sims, gains)
    counts = [b["count"] for b in bins]
    means = [b["mean_gain"] for b in bins]
    assert counts == [1, 2, 0, 1, 1, 1, 0, 2, 0, 2]
    assert means[0] == 1.0
    assert means[1] == 2.5
    assert means[2] is None
    assert means[7] == 7.5
    assert means[9] == 9.5
    assert sum(counts) == 10
