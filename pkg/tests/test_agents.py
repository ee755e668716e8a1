"""Tests for reply envelopes and the five model-facing agents."""

import pytest

from policyweaver.agents import (
    AbstractionResult,
    AgentReplyEnvelope,
    AgentReplyError,
    abstract_domain,
    build_abstract_prompt,
    build_debug_prompt,
    build_policy_prompt,
    debug_policy,
    decompose_policy,
    generalize_dedup,
    generate_policy,
    parse_bindings,
    parse_signature,
    parse_usage_notes,
    search_components,
)
from policyweaver.gateway import CostLedger, Gateway, ScriptedBackend, ScriptedRule
from policyweaver.model import (
    ApiCallRecord,
    ApiDoc,
    Domain,
    GoalTest,
    ModelError,
    Param,
    ParameterBinding,
    Policy,
    PolicySignature,
    TaskInstance,
    ValidationOutcome,
)
from policyweaver.repository import ComponentRepository
from policyweaver.retrieval import MockEmbedder, VectorIndex


def make_gateway(rules):
    return Gateway(ScriptedBackend(rules), CostLedger())


def pay_domain():
    goal = GoalTest(name="paid", kind="record_exists", args={"app": "pay"})
    return Domain(
        id="payments",
        tasks=(
            TaskInstance(
                id="pay_1",
                instruction="Send 25 to Ada",
                initial_state_seed="base",
                goal_tests=(goal,),
            ),
            TaskInstance(
                id="pay_2",
                instruction="Send 40 to Bo",
                initial_state_seed="base",
                goal_tests=(goal,),
            ),
        ),
    )


def pay_signature():
    return PolicySignature(
        name="pay_send",
        params=(Param("recipient", "string"), Param("amount", "number")),
    )


ABSTRACT_REPLY = """Here is the shared structure.

```steps
log in to the pay app
transfer the amount to the recipient
```

```signature
pay_send(recipient: string, amount: number)
```

```bindings
{"task": "pay_1", "values": {"recipient": "acct-ada", "amount": 25}}
{"task": "pay_2", "values": {"recipient": "acct-bo", "amount": 40}}
```
"""

POLICY_REPLY = """```policy
fn pay_send(recipient, amount) {
  call pay.transfer(to = recipient, amount = amount)
  return true
}
```
"""


class TestEnvelope:
    def test_extracts_tagged_blocks_in_order(self):
        env = AgentReplyEnvelope.parse(ABSTRACT_REPLY)
        assert env.tags() == ("steps", "signature", "bindings")
        assert env.one("signature") == "pay_send(recipient: string, amount: number)"

    def test_missing_tag_named(self):
        env = AgentReplyEnvelope.parse("```steps\na\n```\n")
        with pytest.raises(AgentReplyError, match="missing a ```signature block"):
            env.one("signature")

    def test_duplicate_tag_rejected(self):
        env = AgentReplyEnvelope.parse("```policy\na\n```\n```policy\nb\n```\n")
        with pytest.raises(AgentReplyError, match="2 ```policy blocks"):
            env.one("policy")

    def test_empty_block_allowed(self):
        env = AgentReplyEnvelope.parse("```components\n```\n")
        assert env.one("components") == ""

    def test_prefixed_blocks(self):
        env = AgentReplyEnvelope.parse(
            "```policy:mail_d\nA\n```\n```policy:pay_d\nB\n```\n"
        )
        assert env.prefixed("policy:") == {"mail_d": "A", "pay_d": "B"}

    def test_duplicate_prefixed_rejected(self):
        env = AgentReplyEnvelope.parse(
            "```policy:mail_d\nA\n```\n```policy:mail_d\nB\n```\n"
        )
        with pytest.raises(AgentReplyError, match="duplicate"):
            env.prefixed("policy:")

    def test_prose_outside_fences_ignored(self):
        env = AgentReplyEnvelope.parse("thinking...\n```steps\nx\n```\ndone.")
        assert env.one("steps") == "x"


class TestParseSignature:
    def test_parses_params_and_kinds(self):
        sig = parse_signature("  build(songs: list-of-string, public: boolean) ")
        assert sig.render() == "build(songs: list-of-string, public: boolean)"

    def test_empty_params(self):
        assert parse_signature("noop()").params == ()

    def test_malformed(self):
        with pytest.raises(AgentReplyError, match="malformed signature"):
            parse_signature("not a signature")
        with pytest.raises(AgentReplyError, match="parameter"):
            parse_signature("f(x)")

    def test_unknown_kind(self):
        with pytest.raises(AgentReplyError, match="invalid signature"):
            parse_signature("f(x: tensor)")


class TestParseBindings:
    def test_parses_lines_skipping_blanks(self):
        out = parse_bindings(
            '{"task": "t1", "values": {"a": 1}}\n\n{"task": "t2", "values": {"a": 2}}'
        )
        assert [b.task_id for b in out] == ["t1", "t2"]
        assert out[0].values == {"a": 1}

    def test_bad_json_names_line(self):
        with pytest.raises(AgentReplyError, match="line 2"):
            parse_bindings('{"task": "t1", "values": {}}\n{oops}')

    def test_missing_keys(self):
        with pytest.raises(AgentReplyError, match="expected"):
            parse_bindings('{"values": {}}')

    def test_unsupported_literal(self):
        with pytest.raises(AgentReplyError, match="line 1"):
            parse_bindings('{"task": "t1", "values": {"a": {"nested": 1}}}')


class TestParseUsageNotes:
    def test_parses_object(self):
        notes = parse_usage_notes(
            '{"login": {"signature": "login()", "description": "d", "usage": "u"}}'
        )
        assert notes["login"]["usage"] == "u"

    def test_empty_means_none(self):
        assert parse_usage_notes("  \n") == {}

    def test_requires_object(self):
        with pytest.raises(AgentReplyError, match="JSON object"):
            parse_usage_notes("[1, 2]")

    def test_requires_fields(self):
        with pytest.raises(AgentReplyError, match="needs string"):
            parse_usage_notes('{"login": {"signature": "login()"}}')


class TestAbstractDomain:
    def test_scripted_flow(self):
        gateway = make_gateway(
            [ScriptedRule(match="agent=abstract domain=payments", reply=ABSTRACT_REPLY)]
        )
        result = abstract_domain(gateway, pay_domain())
        assert result.signature == pay_signature()
        assert result.high_level_steps[0] == "log in to the pay app"
        assert len(result.bindings) == 2
        assert result.binding_for("pay_2").values["amount"] == 40

    def test_prompt_carries_run_context_and_tasks(self):
        prompt = build_abstract_prompt(pay_domain())
        assert prompt.startswith("RUN-CONTEXT agent=abstract domain=payments\n")
        assert "- pay_1: Send 25 to Ada (goals: paid)" in prompt

    def test_missing_block_reported(self):
        reply = "```steps\nx\n```\n```signature\npay_send(recipient: string, amount: number)\n```\n"
        gateway = make_gateway([ScriptedRule(match="agent=abstract", reply=reply)])
        with pytest.raises(AgentReplyError, match="bindings"):
            abstract_domain(gateway, pay_domain())

    def test_coverage_enforced(self):
        reply = ABSTRACT_REPLY.replace(
            '{"task": "pay_2", "values": {"recipient": "acct-bo", "amount": 40}}\n', ""
        )
        gateway = make_gateway([ScriptedRule(match="agent=abstract", reply=reply)])
        with pytest.raises(AgentReplyError, match="missing: pay_2"):
            abstract_domain(gateway, pay_domain())

    def test_binding_kind_mismatch_reported(self):
        reply = ABSTRACT_REPLY.replace('"amount": 25', '"amount": "lots"')
        gateway = make_gateway([ScriptedRule(match="agent=abstract", reply=reply)])
        with pytest.raises(AgentReplyError, match="pay_1"):
            abstract_domain(gateway, pay_domain())

    def test_duplicate_binding_rejected(self):
        reply = ABSTRACT_REPLY.replace('"task": "pay_2"', '"task": "pay_1"')
        gateway = make_gateway([ScriptedRule(match="agent=abstract", reply=reply)])
        with pytest.raises(AgentReplyError, match="duplicate"):
            abstract_domain(gateway, pay_domain())


def abstraction():
    return AbstractionResult(
        domain_id="payments",
        high_level_steps=("log in to the pay app", "transfer the amount"),
        signature=pay_signature(),
        bindings=(
            ParameterBinding(task_id="pay_1", values={"recipient": "acct-ada", "amount": 25}),
            ParameterBinding(task_id="pay_2", values={"recipient": "acct-bo", "amount": 40}),
        ),
    )


def repo_with_components():
    repo = ComponentRepository()
    login = repo.add_learned(
        name="login_pay",
        signature=PolicySignature(name="login_pay", params=()),
        body="fn login_pay() { return true }",
        description="Log in to the pay app",
        usage_info="Call before any pay API.",
        origin_domains=("payments",),
    )
    other = repo.add_learned(
        name="summarize_orders",
        signature=PolicySignature(name="summarize_orders", params=()),
        body="fn summarize_orders() { return true }",
        description="Sum order totals in the shop",
        usage_info="Call after checkout.",
        origin_domains=("orders",),
    )
    return repo, login, other


DOCS = (
    ApiDoc(
        app="pay",
        api="transfer",
        params=(Param("to", "string"), Param("amount", "number")),
        description="Move money to another account.",
    ),
)


class TestSearchComponents:
    def test_empty_index_empty_result(self):
        assert search_components(abstraction(), VectorIndex(256), MockEmbedder()) == []

    def test_login_component_ranks_first_for_login_steps(self):
        repo, login, other = repo_with_components()
        ranked = search_components(abstraction(), repo.index, repo.provider, k=2)
        assert ranked[0] == login.id
        assert set(ranked) == {login.id, other.id}

    def test_k_larger_than_index(self):
        repo, _, _ = repo_with_components()
        assert len(search_components(abstraction(), repo.index, repo.provider, k=50)) == 2


class TestGeneratePolicy:
    def test_scripted_reply_parsed_and_canonicalized(self):
        gateway = make_gateway(
            [ScriptedRule(match="agent=policy domain=payments attempt=0", reply=POLICY_REPLY)]
        )
        policy = generate_policy(gateway, abstraction(), [], DOCS)
        assert policy.signature == pay_signature()
        assert policy.referenced_components == ()
        assert policy.source.startswith("fn pay_send(recipient, amount) {")

    def test_component_call_resolves_against_offered(self):
        repo, login, _ = repo_with_components()
        reply = POLICY_REPLY.replace(
            "call pay.transfer", "use login_pay()\n  call pay.transfer"
        )
        gateway = make_gateway([ScriptedRule(match="agent=policy", reply=reply)])
        policy = generate_policy(gateway, abstraction(), [login], DOCS)
        assert policy.referenced_components == ("login_pay",)

    def test_unknown_component_rejected(self):
        reply = POLICY_REPLY.replace(
            "call pay.transfer", "use login_pay()\n  call pay.transfer"
        )
        gateway = make_gateway([ScriptedRule(match="agent=policy", reply=reply)])
        with pytest.raises(AgentReplyError, match="unknown component"):
            generate_policy(gateway, abstraction(), [], DOCS)

    def test_signature_drift_rejected(self):
        reply = POLICY_REPLY.replace("fn pay_send(recipient, amount)", "fn pay_send(recipient)")
        gateway = make_gateway([ScriptedRule(match="agent=policy", reply=reply)])
        with pytest.raises(AgentReplyError, match="policy block"):
            generate_policy(gateway, abstraction(), [], DOCS)

    def test_prompt_has_summaries_but_never_bodies(self):
        repo, login, other = repo_with_components()
        prompt = build_policy_prompt(abstraction(), [login, other], DOCS)
        assert f"id: {login.id}" in prompt
        assert "signature: login_pay()" in prompt
        assert "Call before any pay API." in prompt
        assert "return true" not in prompt
        assert "pay.transfer(to: string, amount: number) -- Move money" in prompt
        assert prompt.startswith(
            f"RUN-CONTEXT agent=policy domain=payments attempt=0 "
            f"components=[{login.id}, {other.id}]"
        )

    def test_gp_mode_header_shows_empty_components(self):
        prompt = build_policy_prompt(abstraction(), [], DOCS)
        assert "components=[]" in prompt.splitlines()[0]
        assert "(none)" in prompt


def failed_outcomes(n_records=25):
    trace = tuple(
        ApiCallRecord(app="pay", api="transfer", args={"step": i}, response={"ok": True})
        for i in range(n_records)
    )
    return (
        ValidationOutcome(task_id="pay_1", passed=True),
        ValidationOutcome(
            task_id="pay_2",
            passed=False,
            failed_tests=("paid",),
            error="insufficient funds",
            trace=trace,
        ),
    )


class TestDebugPolicy:
    def policy(self):
        return Policy(
            signature=pay_signature(),
            source="fn pay_send(recipient, amount) {\n  return false\n}\n",
        )

    def test_requires_a_failure(self):
        gateway = make_gateway([])
        with pytest.raises(ModelError, match="failed outcome"):
            debug_policy(
                gateway,
                abstraction(),
                self.policy(),
                (ValidationOutcome(task_id="pay_1", passed=True),),
                [],
                DOCS,
                attempt=1,
            )

    def test_prompt_carries_feedback_with_trace_tail(self):
        prompt = build_debug_prompt(
            abstraction(), self.policy(), failed_outcomes(), [], DOCS, attempt=2
        )
        assert "RUN-CONTEXT agent=policy domain=payments attempt=2" in prompt
        assert "error: insufficient funds" in prompt
        assert "failed goal tests: paid" in prompt
        assert "trace (last 20 of 25 calls)" in prompt
        assert '"step":4' not in prompt.replace(" ", "")
        assert '"step":5' in prompt.replace(" ", "")
        assert '"step":24' in prompt.replace(" ", "")
        assert "task pay_1" not in prompt

    def test_scripted_revision(self):
        gateway = make_gateway(
            [ScriptedRule(match="attempt=1", reply=POLICY_REPLY)]
        )
        revised = debug_policy(
            gateway, abstraction(), self.policy(), failed_outcomes(), [], DOCS, attempt=1
        )
        assert "pay.transfer" in revised.source


DECOMPOSE_REPLY = """```components
fn login_pay() {
  call profile.get_credentials(app = "pay")
  return true
}
```

```usage-notes
{"login_pay": {"signature": "login_pay()", "description": "Log in to pay", "usage": "Call first."}}
```

```policy
fn pay_send(recipient, amount) {
  use login_pay()
  call pay.transfer(to = recipient, amount = amount)
  return true
}
```
"""


class TestDecomposePolicy:
    def policy(self):
        return Policy(
            signature=pay_signature(),
            source=(
                "fn pay_send(recipient, amount) {\n"
                '  call profile.get_credentials(app="pay")\n'
                "  call pay.transfer(to=recipient, amount=amount)\n"
                "  return true\n"
                "}\n"
            ),
        )

    def test_scripted_decomposition(self):
        gateway = make_gateway(
            [ScriptedRule(match="agent=decompose domain=payments", reply=DECOMPOSE_REPLY)]
        )
        drafts, updated = decompose_policy(gateway, self.policy(), pay_domain())
        assert [d.name for d in drafts] == ["login_pay"]
        assert drafts[0].origin_domains == ("payments",)
        assert drafts[0].signature.render() == "login_pay()"
        assert updated.referenced_components == ("login_pay",)
        assert updated.signature == pay_signature()

    def test_empty_decomposition_is_valid(self):
        reply = (
            "```components\n```\n\n```usage-notes\n{}\n```\n\n```policy\n"
            + self.policy().source
            + "```\n"
        )
        gateway = make_gateway([ScriptedRule(match="agent=decompose", reply=reply)])
        drafts, updated = decompose_policy(gateway, self.policy(), pay_domain())
        assert drafts == []
        assert updated.source == self.policy().source

    def test_notes_must_cover_components(self):
        reply = DECOMPOSE_REPLY.replace('"login_pay":', '"other_name":')
        gateway = make_gateway([ScriptedRule(match="agent=decompose", reply=reply)])
        with pytest.raises(AgentReplyError, match="usage-notes block must cover"):
            decompose_policy(gateway, self.policy(), pay_domain())

    def test_component_parse_failure_reported(self):
        reply = DECOMPOSE_REPLY.replace("call profile.get_credentials", "call undefined_var")
        gateway = make_gateway([ScriptedRule(match="agent=decompose", reply=reply)])
        with pytest.raises(AgentReplyError, match="components block"):
            decompose_policy(gateway, self.policy(), pay_domain())

    def test_updated_policy_signature_drift_rejected(self):
        reply = DECOMPOSE_REPLY.replace(
            "fn pay_send(recipient, amount) {\n  use login_pay()",
            "fn pay_send(recipient) {\n  use login_pay()",
        )
        gateway = make_gateway([ScriptedRule(match="agent=decompose", reply=reply)])
        with pytest.raises(AgentReplyError, match="policy block"):
            decompose_policy(gateway, self.policy(), pay_domain())


GENERALIZE_REPLY = """```components
fn login_app(app) {
  call profile.get_credentials(app = app)
  return true
}
```

```usage-notes
{"login_app": {"signature": "login_app(app: string)", "description": "Log in anywhere", "usage": "Call first."}}
```

```replaces
C_MAIL
C_PAY
```

```policy:mail_d
fn mail_flow() {
  use login_app(app = "mail")
  return true
}
```

```policy:pay_d
fn pay_flow() {
  use login_app(app = "pay")
  return true
}
```
"""


class TestGeneralizeDedup:
    def setup(self):
        repo = ComponentRepository()
        mail = repo.add_learned(
            name="login_mail",
            signature=PolicySignature(name="login_mail", params=()),
            body='fn login_mail() {\n  call profile.get_credentials(app = "mail")\n  return true\n}',
            description="Log in to mail",
            usage_info="Call first.",
            origin_domains=("mail_d",),
        )
        pay = repo.add_learned(
            name="login_pay",
            signature=PolicySignature(name="login_pay", params=()),
            body='fn login_pay() {\n  call profile.get_credentials(app = "pay")\n  return true\n}',
            description="Log in to pay",
            usage_info="Call first.",
            origin_domains=("pay_d",),
        )
        policies = {
            "mail_d": Policy(
                signature=PolicySignature(name="mail_flow", params=()),
                source="fn mail_flow() {\n  use login_mail()\n  return true\n}\n",
                referenced_components=("login_mail",),
            ),
            "pay_d": Policy(
                signature=PolicySignature(name="pay_flow", params=()),
                source="fn pay_flow() {\n  use login_pay()\n  return true\n}\n",
                referenced_components=("login_pay",),
            ),
        }
        reply = GENERALIZE_REPLY.replace("C_MAIL", mail.id).replace("C_PAY", pay.id)
        return repo, mail, pay, policies, reply

    def test_merge_proposal(self):
        repo, mail, pay, policies, reply = self.setup()
        gateway = make_gateway([ScriptedRule(match="agent=generalize", reply=reply)])
        proposal = generalize_dedup(
            gateway, mail.id, [mail, pay], policies, feedback=None, attempt=0
        )
        assert proposal.cluster_id == mail.id
        assert [d.name for d in proposal.components] == ["login_app"]
        assert proposal.components[0].origin_domains == ("mail_d", "pay_d")
        assert proposal.replaced_ids == (mail.id, pay.id)
        assert set(proposal.updated_policies) == {"mail_d", "pay_d"}
        assert not proposal.keeps_all

    def test_keep_as_is(self):
        repo, mail, pay, policies, _ = self.setup()
        reply = "```components\n```\n\n```usage-notes\n{}\n```\n\n```replaces\n```\n"
        gateway = make_gateway([ScriptedRule(match="agent=generalize", reply=reply)])
        proposal = generalize_dedup(gateway, mail.id, [mail, pay], policies)
        assert proposal.keeps_all

    def test_non_member_replacement_rejected(self):
        repo, mail, pay, policies, reply = self.setup()
        reply = reply.replace(pay.id, "c099-ghost")
        gateway = make_gateway([ScriptedRule(match="agent=generalize", reply=reply)])
        with pytest.raises(AgentReplyError, match="non-members"):
            generalize_dedup(gateway, mail.id, [mail, pay], policies)

    def test_unknown_domain_policy_rejected(self):
        repo, mail, pay, policies, reply = self.setup()
        del policies["pay_d"]
        gateway = make_gateway([ScriptedRule(match="agent=generalize", reply=reply)])
        with pytest.raises(AgentReplyError, match="unknown domain"):
            generalize_dedup(gateway, mail.id, [mail, pay], policies)

    def test_prompt_includes_bodies_and_feedback(self):
        from policyweaver.agents import build_generalize_prompt

        repo, mail, pay, policies, _ = self.setup()
        prompt = build_generalize_prompt(
            mail.id, [mail, pay], policies, feedback="task pay_1 failed", attempt=1
        )
        assert f"RUN-CONTEXT agent=generalize cluster={mail.id} attempt=1" in prompt
        assert 'call profile.get_credentials(app = "mail")' in prompt
        assert "task pay_1 failed" in prompt
        assert "domain mail_d:" in prompt
