"""Transport paths, the network adversary, and protocol traces.

Two kinds of channel exist. The authenticator-to-server path is secure and
authenticated (its transport handshake is out of scope, so it is modeled as
a lossless FIFO queue the adversary cannot see). The device-to-server path
is public: every message enters adversary custody, and delivery happens only
when an adversary strategy decides it does.

The adversary is symbolic. Alongside the concrete bytes of each observed
message it records a term describing the plaintext structure, so "what can
the attacker derive" is computed exactly by a closure over decomposition
rules rather than guessed from byte matching: tuples split, ciphertexts open
only when the matching secret key is known, signatures reveal what they sign
but can never be forged, hashes never invert.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Iterable, Union

from .runtime import Rng

# Trace event kinds. The protocol-level ones are what the lemma checkers
# quantify over; the rest make transcripts readable.
SESSION_ESTABLISHED = "SessionEstablished"
TOKEN_ISSUED = "TokenIssued"
DEVICE_PROVISIONED = "DeviceProvisioned"
DEVICE_REQUEST_SENT = "DeviceRequestSent"
DEVICE_REQUEST_ACCEPTED = "DeviceRequestAccepted"
DEVICE_REQUEST_REJECTED = "DeviceRequestRejected"
REGISTRATION_SUCCESS = "RegistrationSuccess"
KEYPAIR_DELIVERED = "KeypairDelivered"
DEVICE_ACTIVATED = "DeviceActivated"
ACTIVATION_REJECTED = "ActivationRejected"
CONNECTED_NOTICE = "ConnectedNotice"
DATA_ACCEPTED = "DataAccepted"
DATA_REJECTED = "DataRejected"
RISK_ALERT_RAISED = "RiskAlertRaised"
DEVICE_REVOKED = "DeviceRevoked"
REVOCATION_REJECTED = "RevocationRejected"
LEDGER_COMMIT = "LedgerCommit"
ADVERSARY_ACTION = "AdversaryAction"
MESSAGE_REJECTED = "MessageRejected"


@dataclass(frozen=True)
class TraceEvent:
    time: int  # logical, strictly increasing per trace
    role: str
    kind: str
    fields: tuple[tuple[str, str], ...]

    def get(self, key: str) -> str | None:
        for k, v in self.fields:
            if k == key:
                return v
        return None

    def render(self) -> str:
        kv = " ".join(f"{k}={v}" for k, v in self.fields)
        return f"{self.time:05d} {self.role:<12} {self.kind:<24} {kv}".rstrip()


class Trace:
    """Append-only event log with a global logical clock."""

    def __init__(self):
        self.events: list[TraceEvent] = []
        self._next_time = 1

    def record(self, role: str, kind: str, **fields: str) -> TraceEvent:
        event = TraceEvent(
            time=self._next_time,
            role=role,
            kind=kind,
            fields=tuple(sorted((k, str(v)) for k, v in fields.items())),
        )
        self._next_time += 1
        self.events.append(event)
        return event

    def by_kind(self, kind: str) -> list[TraceEvent]:
        return [e for e in self.events if e.kind == kind]

    def render(self) -> str:
        return "\n".join(e.render() for e in self.events) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.render().encode()).hexdigest()


# ---------------------------------------------------------------------------
# Symbolic terms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Atom:
    """A public or derivable constant (public keys, identifiers, labels)."""
    label: str


@dataclass(frozen=True)
class Secret:
    """A value the protocol must keep from the adversary."""
    label: str


@dataclass(frozen=True)
class Tup:
    items: tuple["Term", ...]


@dataclass(frozen=True)
class Enc:
    """Hybrid encryption under the KEM keypair identified by ``key_id``."""
    key_id: str
    payload: "Term"


@dataclass(frozen=True)
class SymEnc:
    """AEAD under the symmetric key identified by ``key_id``."""
    key_id: str
    payload: "Term"


@dataclass(frozen=True)
class SigT:
    """Signature by the signing keypair ``key_id``; reveals but cannot be forged."""
    key_id: str
    payload: "Term"


@dataclass(frozen=True)
class HashT:
    """One-way digest; never inverted by the closure."""
    payload: "Term"


Term = Union[Atom, Secret, Tup, Enc, SymEnc, SigT, HashT]


def kem_secret(key_id: str) -> Secret:
    return Secret(f"sk:{key_id}")


def sig_secret(key_id: str) -> Secret:
    return Secret(f"sig-sk:{key_id}")


def sym_secret(key_id: str) -> Secret:
    return Secret(f"sym:{key_id}")


def public_key_atom(key_id: str) -> Atom:
    return Atom(f"pk:{key_id}")


class AdversaryKnowledge:
    """Everything the adversary has observed or been granted.

    ``terms`` holds structured knowledge; ``byte_strings`` holds raw wire
    bytes available for replay and injection.
    """

    def __init__(self, terms: Iterable[Term] = (), byte_strings: Iterable[bytes] = ()):
        self.terms: set[Term] = set(terms)
        self.byte_strings: set[bytes] = set(byte_strings)

    def observe(self, data: bytes | None = None, term: Term | None = None) -> None:
        if data is not None:
            self.byte_strings.add(data)
        if term is not None:
            self.terms.add(term)

    def grant(self, *terms: Term) -> None:
        """Hand the adversary knowledge by fiat (compromise fixtures)."""
        self.terms.update(terms)

    def copy(self) -> "AdversaryKnowledge":
        return AdversaryKnowledge(self.terms, self.byte_strings)


def derive_closure(knowledge: AdversaryKnowledge) -> AdversaryKnowledge:
    """Fixpoint of the decomposition rules over the knowledge set.

    Rules: tuples split into components; an encryption opens iff the matching
    secret key is in the set; signatures reveal their payload; hashes do not
    invert. The result is monotone and idempotent.
    """
    terms = set(knowledge.terms)
    changed = True
    while changed:
        changed = False
        for term in list(terms):
            derived: list[Term] = []
            if isinstance(term, Tup):
                derived.extend(term.items)
            elif isinstance(term, Enc) and kem_secret(term.key_id) in terms:
                derived.append(term.payload)
            elif isinstance(term, SymEnc) and sym_secret(term.key_id) in terms:
                derived.append(term.payload)
            elif isinstance(term, SigT):
                derived.append(term.payload)
            for d in derived:
                if d not in terms:
                    terms.add(d)
                    changed = True
    return AdversaryKnowledge(terms, knowledge.byte_strings)


# ---------------------------------------------------------------------------
# Channels
# ---------------------------------------------------------------------------

class ChannelClosed(Exception):
    pass


class SecureChannel:
    """Reliable, ordered, adversary-invisible path between two endpoints."""

    def __init__(self, endpoint_a: str, endpoint_b: str):
        self.endpoints = (endpoint_a, endpoint_b)
        self._queues: dict[str, list] = {endpoint_a: [], endpoint_b: []}
        self._open = True

    def close(self) -> None:
        self._open = False

    def send(self, sender: str, message) -> None:
        if not self._open:
            raise ChannelClosed(f"secure channel {self.endpoints} is closed")
        receiver = self._other(sender)
        self._queues[receiver].append(message)

    def recv(self, receiver: str):
        if not self._open:
            raise ChannelClosed(f"secure channel {self.endpoints} is closed")
        queue = self._queues[receiver]
        if not queue:
            raise ChannelClosed(f"no message queued for {receiver}")
        return queue.pop(0)

    def pending(self, receiver: str) -> int:
        return len(self._queues[receiver])

    def _other(self, endpoint: str) -> str:
        a, b = self.endpoints
        if endpoint == a:
            return b
        if endpoint == b:
            return a
        raise ValueError(f"{endpoint} is not an endpoint of this channel")


@dataclass
class CustodyEntry:
    """A public-channel message waiting for an adversary decision."""

    index: int
    src: str
    dst: str
    data: bytes
    term: Term
    kind: str
    replays_left: int = 1


class PublicChannel:
    """Hostile path: every message passes through adversary custody."""

    def __init__(self, knowledge: AdversaryKnowledge):
        self.knowledge = knowledge
        self.pending: list[CustodyEntry] = []
        self._next_index = 0
        self._open = True

    def close(self) -> None:
        self._open = False

    def send(self, src: str, dst: str, data: bytes, term: Term,
             kind: str) -> CustodyEntry:
        if not self._open:
            raise ChannelClosed("public channel is closed")
        entry = CustodyEntry(self._next_index, src, dst, data, term, kind)
        self._next_index += 1
        self.pending.append(entry)
        # Observation is immediate: custody means the adversary saw it.
        self.knowledge.observe(data=data, term=term)
        return entry

    def take(self, index: int) -> CustodyEntry:
        for i, entry in enumerate(self.pending):
            if entry.index == index:
                return self.pending.pop(i)
        raise KeyError(f"no pending message with index {index}")


# ---------------------------------------------------------------------------
# Adversary strategies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdversaryAction:
    action: str            # deliver | drop | replay | tamper | inject
    index: int | None = None
    dst: str | None = None
    data: bytes | None = None
    bit: int | None = None

    def describe(self) -> str:
        parts = [self.action]
        if self.index is not None:
            parts.append(f"idx={self.index}")
        if self.bit is not None:
            parts.append(f"bit={self.bit}")
        if self.dst is not None:
            parts.append(f"dst={self.dst}")
        return " ".join(parts)


class DeliverAll:
    """Passive adversary: forwards everything untouched, in order."""

    def decide(self, channel: PublicChannel, rng: Rng) -> AdversaryAction | None:
        if not channel.pending:
            return None
        return AdversaryAction("deliver", index=channel.pending[0].index)


class Scripted:
    """Plays a fixed list of rules keyed on public-channel message index.

    Each rule is ``{"on": <message index>, "action": <name>, ...params}``.
    Messages without a rule are delivered in order. Unconsumed rules simply
    never fire (the message they target may not exist in a given run).
    """

    def __init__(self, rules: list[dict]):
        self.rules = {int(rule["on"]): dict(rule) for rule in rules}

    def decide(self, channel: PublicChannel, rng: Rng) -> AdversaryAction | None:
        if not channel.pending:
            return None
        entry = channel.pending[0]
        rule = self.rules.pop(entry.index, None)
        if rule is None:
            return AdversaryAction("deliver", index=entry.index)
        action = rule["action"]
        if action == "deliver":
            return AdversaryAction("deliver", index=entry.index)
        if action == "drop":
            return AdversaryAction("drop", index=entry.index)
        if action == "replay":
            return AdversaryAction("replay", index=entry.index)
        if action == "tamper":
            return AdversaryAction("tamper", index=entry.index,
                                   bit=int(rule.get("bit", 0)))
        if action == "inject":
            return AdversaryAction("inject", dst=rule["dst"],
                                   data=rule["data"], index=entry.index)
        raise ValueError(f"unknown scripted action {action!r}")


DEFAULT_WEIGHTS = {
    "deliver": 6.0,
    "drop": 1.0,
    "replay": 1.0,
    "tamper": 1.0,
    "inject": 1.0,
}


class Randomized:
    """Seeded scheduler choosing weighted actions per custody message.

    ``forge`` supplies injectable byte strings built from adversary
    knowledge (replayed ciphertexts, forged registrations). The action
    budget bounds replays and injections so every run terminates.
    """

    def __init__(self, weights: dict[str, float] | None = None,
                 budget: int = 64,
                 forge: Callable[[AdversaryKnowledge, Rng], bytes | None] | None = None):
        merged = dict(DEFAULT_WEIGHTS)
        if weights:
            unknown = set(weights) - set(merged)
            if unknown:
                raise ValueError(f"unknown adversary actions: {sorted(unknown)}")
            merged.update(weights)
        self.weights = merged
        self.budget = budget
        self.forge = forge

    def decide(self, channel: PublicChannel, rng: Rng) -> AdversaryAction | None:
        if not channel.pending or self.budget <= 0:
            return None
        self.budget -= 1
        entry = channel.pending[rng.randrange(len(channel.pending))]
        names = sorted(self.weights)
        action = rng.weighted_choice(names, [self.weights[n] for n in names])
        if action == "replay" and entry.replays_left <= 0:
            action = "deliver"
        if action == "tamper":
            return AdversaryAction("tamper", index=entry.index,
                                   bit=rng.randrange(len(entry.data) * 8))
        if action == "inject":
            data = None
            if self.forge is not None:
                data = self.forge(channel.knowledge, rng)
            if data is None:
                stored = sorted(channel.knowledge.byte_strings)
                data = stored[rng.randrange(len(stored))] if stored else None
            if data is None:
                return AdversaryAction("deliver", index=entry.index)
            dst = entry.dst if rng.random() < 0.8 else entry.src
            return AdversaryAction("inject", dst=dst, data=data, index=entry.index)
        return AdversaryAction(action, index=entry.index)
