"""Deterministic simulated multi-app world: state, API handlers, reset.

States are values: apply_api never touches its input, it returns a fresh
state (or raises ApiError leaving the input as the current state). All
record data is JSON-shaped so states serialize canonically for hashing.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from typing import Any, Callable, Mapping

from ..lang.interp import ApiError
from ..model import (
    ApiDoc,
    MetaDomainDescriptor,
    ModelError,
    TaskInstance,
    literal_kind,
    sorted_map,
)


@dataclass(frozen=True)
class WorldState:
    """Per-app record stores plus the session table and id counters."""

    records: dict[str, dict[str, dict[str, Any]]]
    sessions: dict[str, str]
    counters: dict[str, int]

    def clone(self) -> "WorldState":
        return WorldState(
            records=copy.deepcopy(self.records),
            sessions=dict(self.sessions),
            counters=dict(self.counters),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "records": {
                app: {rid: sorted_map(rec) for rid, rec in sorted(store.items())}
                for app, store in sorted(self.records.items())
            },
            "sessions": sorted_map(self.sessions),
            "counters": sorted_map(self.counters),
        }


def _bundled_json(name: str) -> dict[str, Any]:
    path = resources.files(__package__) / "data" / name
    return json.loads(path.read_text(encoding="utf-8"))


class MiniWorld:
    """The bundled meta-domain: app catalog, credentials, seeds, API semantics."""

    def __init__(self, data: Mapping[str, Any]):
        self.name = data["name"]
        self.user_email = data["user"]["email"]
        self.credentials = {app: dict(c) for app, c in data["credentials"].items()}
        self.catalog = tuple(ApiDoc.from_dict(d) for d in data["api_catalog"])
        self._schemas = {(d.app, d.api): d for d in self.catalog}
        self._prefixes = dict(data["id_prefixes"])
        self._base = data["base"]
        self._seeds = data["seeds"]
        self._counter_start = data.get("counter_start", 100)
        for app in self._base:
            if app not in self._prefixes:
                raise ModelError(f"app {app!r} has no id prefix")
        for (app, api) in self._handlers():
            if (app, api) not in self._schemas:
                raise ModelError(f"handler {app}.{api} missing from the api catalog")
        for doc in self.catalog:
            if (doc.app, doc.api) not in self._handlers():
                raise ModelError(f"catalog entry {doc.doc_id} has no handler")

    @classmethod
    def from_bundled(cls) -> "MiniWorld":
        return cls(_bundled_json("world.json"))

    # --- catalog ---

    def api_docs(self) -> tuple[ApiDoc, ...]:
        return self.catalog

    def descriptor(self) -> MetaDomainDescriptor:
        return MetaDomainDescriptor(name=self.name, api_catalog=self.catalog)

    def apps(self) -> tuple[str, ...]:
        return tuple(sorted(self._base))

    # --- state construction ---

    def reset(self, task: TaskInstance | str) -> WorldState:
        seed = task.initial_state_seed if isinstance(task, TaskInstance) else task
        if seed not in self._seeds:
            raise ModelError(f"unknown initial-state seed {seed!r}")
        records = {
            app: {rid: dict(rec) for rid, rec in store.items()}
            for app, store in self._base.items()
        }
        for app, overlay in self._seeds[seed].items():
            store = records.setdefault(app, {})
            for rid, rec in overlay.items():
                store[rid] = dict(rec)
        return WorldState(
            records=copy.deepcopy(records),
            sessions={},
            counters={app: self._counter_start for app in records},
        )

    # --- api execution ---

    def apply_api(
        self, state: WorldState, app: str, api: str, args: Mapping[str, Any]
    ) -> tuple[WorldState, Any]:
        schema = self._schemas.get((app, api))
        if schema is None:
            raise ApiError(f"unknown api {app}.{api}")
        self._check_args(schema, args)
        if api != "login" and app != "profile" and app not in state.sessions:
            raise ApiError(f"not logged in to {app}")
        new = state.clone()
        response = self._handlers()[(app, api)](self, new, dict(args))
        return new, response

    def _check_args(self, schema: ApiDoc, args: Mapping[str, Any]) -> None:
        for p in schema.params:
            if p.name not in args:
                raise ApiError(f"{schema.doc_id}: missing argument {p.name!r}")
            got = literal_kind(args[p.name])
            if got != p.kind:
                raise ApiError(
                    f"{schema.doc_id}: argument {p.name!r} must be {p.kind}, "
                    f"got {got or 'an unsupported value'}"
                )
        extra = sorted(set(args) - {p.name for p in schema.params})
        if extra:
            raise ApiError(f"{schema.doc_id}: unexpected argument(s) {', '.join(extra)}")

    def _new_id(self, state: WorldState, app: str) -> str:
        n = state.counters[app]
        state.counters[app] = n + 1
        return f"{self._prefixes[app]}{n}"

    def _get(self, state: WorldState, app: str, rid: str, what: str) -> dict[str, Any]:
        rec = state.records[app].get(rid)
        if rec is None:
            raise ApiError(f"no such {what}: {rid}")
        return rec

    # --- handlers; each mutates the (already cloned) state in place ---

    def _login(self, state: WorldState, app: str, args: dict[str, Any]) -> Any:
        creds = self.credentials[app]
        if args["username"] != creds["username"] or args["password"] != creds["password"]:
            raise ApiError(f"{app}.login: invalid credentials")
        state.sessions[app] = args["username"]
        return {"status": "ok", "account": args["username"]}

    def _profile_get_credentials(self, state, args):
        creds = self.credentials.get(args["app"])
        if creds is None:
            raise ApiError(f"no stored credentials for app {args['app']!r}")
        return {"app": args["app"], "username": creds["username"], "password": creds["password"]}

    def _profile_show(self, state, args):
        return dict(state.records["profile"]["me"])

    def _profile_list_apps(self, state, args):
        names = sorted(self.credentials)
        return {"items": names, "count": len(names)}

    def _profile_set_field(self, state, args):
        state.records["profile"]["me"][args["field"]] = args["value"]
        return {"status": "ok"}

    def _mail_send(self, state, args):
        mid = self._new_id(state, "mail")
        state.records["mail"][mid] = {
            "id": mid,
            "from": self.user_email,
            "to": args["to"],
            "subject": args["subject"],
            "body": args["body"],
        }
        return {"id": mid, "status": "sent"}

    def _mail_inbox(self, state, args):
        items = [dict(r) for r in state.records["mail"].values()]
        return {"items": items, "count": len(items)}

    def _mail_get(self, state, args):
        return dict(self._get(state, "mail", args["id"], "message"))

    def _mail_delete(self, state, args):
        self._get(state, "mail", args["id"], "message")
        del state.records["mail"][args["id"]]
        return {"status": "ok", "deleted": args["id"]}

    def _pay_transfer(self, state, args):
        if args["amount"] <= 0:
            raise ApiError("pay.transfer: amount must be positive")
        acct = state.records["pay"]["acct-me"]
        if args["amount"] > acct["balance"]:
            raise ApiError("pay.transfer: insufficient funds")
        acct["balance"] = acct["balance"] - args["amount"]
        tid = self._new_id(state, "pay")
        state.records["pay"][tid] = {
            "id": tid,
            "kind": "txn",
            "to": args["to"],
            "amount": args["amount"],
            "note": args["note"],
        }
        return {"id": tid, "status": "ok", "balance": acct["balance"]}

    def _pay_balance(self, state, args):
        return {"account": "acct-me", "balance": state.records["pay"]["acct-me"]["balance"]}

    def _pay_history(self, state, args):
        items = [dict(r) for r in state.records["pay"].values() if r.get("kind") == "txn"]
        return {"items": items, "count": len(items)}

    def _music_create_playlist(self, state, args):
        pid = self._new_id(state, "music")
        state.records["music"][pid] = {
            "id": pid,
            "kind": "playlist",
            "name": args["name"],
            "songs": [],
        }
        return {"id": pid, "status": "ok"}

    def _music_add_song(self, state, args):
        rec = self._get(state, "music", args["playlist_id"], "playlist")
        rec["songs"].append(args["song"])
        return {"status": "ok", "count": len(rec["songs"])}

    def _music_list_playlists(self, state, args):
        items = [dict(r) for r in state.records["music"].values()]
        return {"items": items, "count": len(items)}

    def _music_delete_playlist(self, state, args):
        self._get(state, "music", args["id"], "playlist")
        del state.records["music"][args["id"]]
        return {"status": "ok", "deleted": args["id"]}

    def _contacts_add(self, state, args):
        cid = self._new_id(state, "contacts")
        state.records["contacts"][cid] = {
            "id": cid,
            "name": args["name"],
            "email": args["email"],
            "phone": args["phone"],
        }
        return {"id": cid, "status": "ok"}

    def _contacts_list(self, state, args):
        items = [dict(r) for r in state.records["contacts"].values()]
        return {"items": items, "count": len(items)}

    def _contacts_find(self, state, args):
        for rec in state.records["contacts"].values():
            if rec["name"] == args["name"]:
                return dict(rec)
        raise ApiError(f"no contact named {args['name']!r}")

    def _contacts_delete(self, state, args):
        self._get(state, "contacts", args["id"], "contact")
        del state.records["contacts"][args["id"]]
        return {"status": "ok", "deleted": args["id"]}

    def _shop_find(self, state, args):
        for rec in state.records["shop"].values():
            if rec.get("kind") == "item" and rec["name"] == args["name"]:
                return dict(rec)
        raise ApiError(f"no catalog item named {args['name']!r}")

    def _shop_add_to_cart(self, state, args):
        item = state.records["shop"].get(args["item_id"])
        if item is None or item.get("kind") != "item":
            raise ApiError(f"no such catalog item: {args['item_id']}")
        if args["qty"] <= 0:
            raise ApiError("shop.add_to_cart: qty must be positive")
        cid = self._new_id(state, "shop")
        state.records["shop"][cid] = {
            "id": cid,
            "kind": "cart",
            "item_id": args["item_id"],
            "qty": args["qty"],
        }
        return {"id": cid, "status": "ok"}

    def _shop_checkout(self, state, args):
        cart = [r for r in state.records["shop"].values() if r.get("kind") == "cart"]
        if not cart:
            raise ApiError("shop.checkout: cart is empty")
        order_ids = []
        for entry in cart:
            price = state.records["shop"][entry["item_id"]]["price"]
            oid = self._new_id(state, "shop")
            state.records["shop"][oid] = {
                "id": oid,
                "kind": "order",
                "item_id": entry["item_id"],
                "qty": entry["qty"],
                "total": entry["qty"] * price,
            }
            order_ids.append(oid)
            del state.records["shop"][entry["id"]]
        return {"status": "ok", "orders": order_ids, "count": len(order_ids)}

    def _shop_orders(self, state, args):
        items = [dict(r) for r in state.records["shop"].values() if r.get("kind") == "order"]
        return {"items": items, "count": len(items)}

    def _calendar_create_event(self, state, args):
        eid = self._new_id(state, "calendar")
        state.records["calendar"][eid] = {
            "id": eid,
            "title": args["title"],
            "date": args["date"],
            "invitees": [],
        }
        return {"id": eid, "status": "ok"}

    def _calendar_invite(self, state, args):
        rec = self._get(state, "calendar", args["event_id"], "event")
        if args["email"] not in rec["invitees"]:
            rec["invitees"].append(args["email"])
        return {"status": "ok", "invitees": list(rec["invitees"])}

    def _calendar_list_events(self, state, args):
        items = [dict(r) for r in state.records["calendar"].values()]
        return {"items": items, "count": len(items)}

    def _calendar_delete_event(self, state, args):
        self._get(state, "calendar", args["id"], "event")
        del state.records["calendar"][args["id"]]
        return {"status": "ok", "deleted": args["id"]}

    _HANDLERS: dict[tuple[str, str], Callable] | None = None

    def _handlers(self) -> dict[tuple[str, str], Callable]:
        if MiniWorld._HANDLERS is None:
            table: dict[tuple[str, str], Callable] = {}
            for app in ("mail", "pay", "music", "contacts", "shop", "calendar"):
                table[(app, "login")] = (
                    lambda self, state, args, _app=app: self._login(state, _app, args)
                )
            table.update(
                {
                    ("profile", "get_credentials"): MiniWorld._profile_get_credentials,
                    ("profile", "show"): MiniWorld._profile_show,
                    ("profile", "list_apps"): MiniWorld._profile_list_apps,
                    ("profile", "set_field"): MiniWorld._profile_set_field,
                    ("mail", "send"): MiniWorld._mail_send,
                    ("mail", "inbox"): MiniWorld._mail_inbox,
                    ("mail", "get"): MiniWorld._mail_get,
                    ("mail", "delete"): MiniWorld._mail_delete,
                    ("pay", "transfer"): MiniWorld._pay_transfer,
                    ("pay", "balance"): MiniWorld._pay_balance,
                    ("pay", "history"): MiniWorld._pay_history,
                    ("music", "create_playlist"): MiniWorld._music_create_playlist,
                    ("music", "add_song"): MiniWorld._music_add_song,
                    ("music", "list_playlists"): MiniWorld._music_list_playlists,
                    ("music", "delete_playlist"): MiniWorld._music_delete_playlist,
                    ("contacts", "add"): MiniWorld._contacts_add,
                    ("contacts", "list"): MiniWorld._contacts_list,
                    ("contacts", "find"): MiniWorld._contacts_find,
                    ("contacts", "delete"): MiniWorld._contacts_delete,
                    ("shop", "find"): MiniWorld._shop_find,
                    ("shop", "add_to_cart"): MiniWorld._shop_add_to_cart,
                    ("shop", "checkout"): MiniWorld._shop_checkout,
                    ("shop", "orders"): MiniWorld._shop_orders,
                    ("calendar", "create_event"): MiniWorld._calendar_create_event,
                    ("calendar", "invite"): MiniWorld._calendar_invite,
                    ("calendar", "list_events"): MiniWorld._calendar_list_events,
                    ("calendar", "delete_event"): MiniWorld._calendar_delete_event,
                }
            )
            MiniWorld._HANDLERS = table
        return MiniWorld._HANDLERS
