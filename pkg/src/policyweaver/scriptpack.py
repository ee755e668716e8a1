"""Scripted backend replies that drive the bundled scenario pack end to end.

The rules encode one deterministic narrative. Each training domain solves on
its first attempt and factors its login sequence into a component; a
generalization pass merges the four logins into a single dispatching
component; the test domains then reuse it. Policy prompts advertise the
offered component ids in their RUN-CONTEXT header, so gp-mode prompts (always
``components=[]``) route to slower component-free replies than hclgp-mode
prompts built from the same rule list, which is what lets tests compare the
two modes on an identical backend.
"""

from __future__ import annotations

import json

from .gateway import ScriptedRule
from .miniworld.scenarios import ScenarioPack, load_pack

# Component ids minted by the scripted run, in creation order.
LOGIN_COMPONENT_IDS = (
    "c001-login_pay",
    "c002-login_mail",
    "c003-login_music",
    "c004-login_contacts",
)
SEED_COMPONENT_ID = "c005-login_app"

# Shared description prose keeps the four login components above the default
# clustering threshold (0.85) under the hashed-trigram embedder.
_LOGIN_DESCRIPTION = (
    "Fetch the saved profile credentials for the {app} app and start an "
    "authenticated session so that every later call made against the same "
    "app in this workflow succeeds without an auth error."
)
_LOGIN_USAGE = "Call once before any {app} API in the policy."

_TRAIN_APPS = {
    "pay_send": "pay",
    "mail_send": "mail",
    "playlist_build": "music",
    "contact_add": "contacts",
}

_STEPS = {
    "pay_send": (
        "log in to the pay app with saved credentials",
        "transfer the amount to the recipient with the note",
    ),
    "mail_send": (
        "log in to the mail app with saved credentials",
        "send the message with its subject and body to the address",
    ),
    "playlist_build": (
        "log in to the music app with saved credentials",
        "create the playlist",
        "add every song to it in order",
    ),
    "contact_add": (
        "log in to the contacts app with saved credentials",
        "add the person with their email and phone",
    ),
    "mail_cleanup": (
        "log in to the mail app with saved credentials",
        "list the inbox",
        "delete every message from the sender",
    ),
    "contact_pay": (
        "log in to the contacts app with saved credentials",
        "look up the contact's email",
        "log in to the pay app with saved credentials",
        "transfer the amount to that email with the note",
    ),
    "shop_order": (
        "log in to the shop app with saved credentials",
        "find the item",
        "add the quantity to the cart",
        "check out",
    ),
    "calendar_event": (
        "log in to the calendar app with saved credentials",
        "create the event on the date",
        "invite every listed person",
    ),
}


def login_component_body(name: str, app: str) -> str:
    return (
        f"fn {name}() {{\n"
        f'  let creds = call profile.get_credentials(app = "{app}")\n'
        f"  call {app}.login(username = creds.username, password = creds.password)\n"
        f"  return true\n"
        f"}}"
    )


MERGED_COMPONENT_BODY = """fn login_app(app) {
  let creds = call profile.get_credentials(app = app)
  if app == "pay" {
    call pay.login(username = creds.username, password = creds.password)
  } else {
    if app == "mail" {
      call mail.login(username = creds.username, password = creds.password)
    } else {
      if app == "music" {
        call music.login(username = creds.username, password = creds.password)
      } else {
        call contacts.login(username = creds.username, password = creds.password)
      }
    }
  }
  return true
}"""

MERGED_DESCRIPTION = (
    "Fetch the saved profile credentials for the named app and start an "
    "authenticated session there before making any other call."
)
MERGED_USAGE = 'Call once per app before its APIs, e.g. use login_app(app = "mail").'

# Updated train policies, keyed by domain, after factoring out the login.
_FACTORED = {
    "pay_send": (
        "fn pay_send(recipient, amount, note) {{\n"
        "  use {login}\n"
        "  call pay.transfer(to = recipient, amount = amount, note = note)\n"
        "}}"
    ),
    "mail_send": (
        "fn mail_send(to, subject, body) {{\n"
        "  use {login}\n"
        "  call mail.send(to = to, subject = subject, body = body)\n"
        "}}"
    ),
    "playlist_build": (
        "fn playlist_build(name, songs) {{\n"
        "  use {login}\n"
        "  let pl = call music.create_playlist(name = name)\n"
        "  foreach s in songs {{\n"
        "    call music.add_song(playlist_id = pl.id, song = s)\n"
        "  }}\n"
        "}}"
    ),
    "contact_add": (
        "fn contact_add(name, email, phone) {{\n"
        "  use {login}\n"
        "  call contacts.add(name = name, email = email, phone = phone)\n"
        "}}"
    ),
}

# Test-phase policies that reuse the merged seed component.
_REUSE_POLICIES = {
    "mail_cleanup": """fn mail_cleanup(sender) {
  use login_app(app = "mail")
  let box = call mail.inbox()
  foreach m in box.items {
    if m.from == sender {
      call mail.delete(id = m.id)
    }
  }
}""",
    "contact_pay": """fn contact_pay(contact, amount, note) {
  use login_app(app = "contacts")
  let person = call contacts.find(name = contact)
  use login_app(app = "pay")
  call pay.transfer(to = person.email, amount = amount, note = note)
}""",
}

# First wrong attempt everywhere: the policy forgets to authenticate.
_NO_LOGIN = {
    "mail_cleanup": """fn mail_cleanup(sender) {
  let box = call mail.inbox()
  foreach m in box.items {
    if m.from == sender {
      call mail.delete(id = m.id)
    }
  }
}""",
    "contact_pay": """fn contact_pay(contact, amount, note) {
  let person = call contacts.find(name = contact)
  call pay.transfer(to = person.email, amount = amount, note = note)
}""",
    "shop_order": """fn shop_order(item, qty) {
  let found = call shop.find(name = item)
  call shop.add_to_cart(item_id = found.id, qty = qty)
  call shop.checkout()
}""",
    "calendar_event": """fn calendar_event(title, date, invitees) {
  let ev = call calendar.create_event(title = title, date = date)
  foreach person in invitees {
    call calendar.invite(event_id = ev.id, email = person)
  }
}""",
}

# Second wrong attempt for the two slow gp-mode domains: authenticated but
# the workflow stops short of its goal.
_HALF_DONE = {
    "mail_cleanup": """fn mail_cleanup(sender) {
  let creds = call profile.get_credentials(app = "mail")
  call mail.login(username = creds.username, password = creds.password)
  let box = call mail.inbox()
}""",
    "contact_pay": """fn contact_pay(contact, amount, note) {
  let creds = call profile.get_credentials(app = "pay")
  call pay.login(username = creds.username, password = creds.password)
  call pay.transfer(to = contact, amount = amount, note = note)
}""",
}


def _fenced(tag: str, text: str) -> str:
    return f"```{tag}\n{text}\n```" if text else f"```{tag}\n```"


def _abstract_reply(pack: ScenarioPack, domain_id: str) -> str:
    domain = pack.domain(domain_id)
    reference = pack.reference[domain_id]
    bindings = "\n".join(
        json.dumps({"task": task.id, "values": reference.bindings[task.id].values})
        for task in domain.tasks
    )
    return "\n\n".join(
        [
            _fenced("steps", "\n".join(_STEPS[domain_id])),
            _fenced("signature", reference.policy.signature.render()),
            _fenced("bindings", bindings),
        ]
    )


def _policy_reply(source: str) -> str:
    return _fenced("policy", source)


def _decompose_factoring_reply(domain_id: str) -> str:
    app = _TRAIN_APPS[domain_id]
    name = f"login_{app}"
    body = login_component_body(name, app)
    notes = json.dumps(
        {
            name: {
                "signature": f"{name}()",
                "description": _LOGIN_DESCRIPTION.format(app=app),
                "usage": _LOGIN_USAGE.format(app=app),
            }
        }
    )
    updated = _FACTORED[domain_id].format(login=f"{name}()")
    return "\n\n".join(
        [_fenced("components", body), _fenced("usage-notes", notes), _fenced("policy", updated)]
    )


def _decompose_keep_reply(source: str) -> str:
    return "\n\n".join(
        [_fenced("components", ""), _fenced("usage-notes", "{}"), _fenced("policy", source)]
    )


def _generalize_merge_reply() -> str:
    notes = json.dumps(
        {
            "login_app": {
                "signature": "login_app(app: string)",
                "description": MERGED_DESCRIPTION,
                "usage": MERGED_USAGE,
            }
        }
    )
    blocks = [
        _fenced("components", MERGED_COMPONENT_BODY),
        _fenced("usage-notes", notes),
        _fenced("replaces", "\n".join(LOGIN_COMPONENT_IDS)),
    ]
    for domain_id in _TRAIN_APPS:
        updated = _FACTORED[domain_id].format(login='login_app(app = "{0}")'.format(_TRAIN_APPS[domain_id]))
        blocks.append(_fenced(f"policy:{domain_id}", updated))
    return "\n\n".join(blocks)


GENERALIZE_KEEP_REPLY = "\n\n".join(
    [_fenced("components", ""), _fenced("usage-notes", "{}"), _fenced("replaces", "")]
)


def train_rules(pack: ScenarioPack) -> list[ScriptedRule]:
    """Every training domain: abstract, solve first try, factor out login."""
    rules = []
    for domain in pack.train:
        reference = pack.reference[domain.id]
        rules.append(
            ScriptedRule(
                match=f"agent=abstract domain={domain.id}",
                reply=_abstract_reply(pack, domain.id),
            )
        )
        rules.append(
            ScriptedRule(
                match=f"agent=policy domain={domain.id} attempt=0",
                reply=_policy_reply(reference.policy.source),
            )
        )
        rules.append(
            ScriptedRule(
                match=f"agent=decompose domain={domain.id}",
                reply=_decompose_factoring_reply(domain.id),
            )
        )
    return rules


def test_rules(pack: ScenarioPack) -> list[ScriptedRule]:
    """Test domains: gp-mode prompts (components=[]) take wrong turns before
    the component-free reference appears; prompts that offer components solve
    first try, reusing the merged login where an app was seen in training."""
    rules = []
    for domain in pack.test:
        reference = pack.reference[domain.id]
        slow = domain.id in _HALF_DONE
        rules.append(
            ScriptedRule(
                match=f"agent=abstract domain={domain.id}",
                reply=_abstract_reply(pack, domain.id),
            )
        )
        rules.append(
            ScriptedRule(
                match=f"agent=policy domain={domain.id} attempt=0 components=[]",
                reply=_policy_reply(_NO_LOGIN[domain.id]),
            )
        )
        if slow:
            rules.append(
                ScriptedRule(
                    match=f"agent=policy domain={domain.id} attempt=1 components=[]",
                    reply=_policy_reply(_HALF_DONE[domain.id]),
                )
            )
        solved_source = _REUSE_POLICIES.get(domain.id, reference.policy.source)
        rules.append(
            ScriptedRule(
                match=f"agent=policy domain={domain.id} attempt=0",
                reply=_policy_reply(solved_source),
            )
        )
        rules.append(
            ScriptedRule(
                match=f"agent=policy domain={domain.id} attempt={2 if slow else 1}",
                reply=_policy_reply(reference.policy.source),
            )
        )
        rules.append(
            ScriptedRule(
                match=f"agent=decompose domain={domain.id}",
                reply=_decompose_keep_reply(solved_source),
            )
        )
    return rules


def generalize_rules() -> list[ScriptedRule]:
    return [
        ScriptedRule(
            match=f"agent=generalize cluster={LOGIN_COMPONENT_IDS[0]}",
            reply=_generalize_merge_reply(),
        ),
        ScriptedRule(
            match=f"agent=generalize cluster={SEED_COMPONENT_ID}",
            reply=GENERALIZE_KEEP_REPLY,
        ),
    ]


def full_rules(pack: ScenarioPack | None = None) -> list[ScriptedRule]:
    """The complete rule list; ends with a harmless keep-shaped catch-all so
    unforeseen prompts degrade into parse errors instead of backend faults."""
    pack = pack or load_pack()
    return (
        train_rules(pack)
        + test_rules(pack)
        + generalize_rules()
        + [ScriptedRule(match="", reply=GENERALIZE_KEEP_REPLY)]
    )
